"""Loop-heavy numeric kernels, each with a compiled and a plain-numpy path.

The compiled path uses numba's ``@njit`` and is selected by default when
numba imports cleanly. Set the environment variable ``CONDDET_NUMBA=0``
before import to force the pure-numpy fallbacks (handy for debugging and
as the baseline in ``benchmarks/bench_kernels.py``). Both paths implement
the same arithmetic on float64 and produce bit-identical results.

Public entry points pick the active path once at import time:

    assign_min_cost   rectangular min-cost assignment (rows <= cols)
    iou_matrix        pairwise IoU for center-format boxes
    giou_matrix       pairwise generalized IoU
    l1_matrix         pairwise L1 distance between box vectors
    rasterize_boxes   draw patterned rectangles into an image
"""

import os

import numpy as np


def _numba_requested():
    flag = os.environ.get("CONDDET_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


NUMBA_ACTIVE = False
if _numba_requested():
    try:
        from numba import njit

        NUMBA_ACTIVE = True
    except ImportError:  # pragma: no cover - numba is an install-time dep
        NUMBA_ACTIVE = False


def _assign_min_cost_plain(cost):
    # Shortest-augmenting-path assignment with row/column potentials.
    # cost is (K, N) with K <= N; returns col index chosen for each row.
    K, N = cost.shape
    u = np.zeros(K, np.float64)
    v = np.zeros(N + 1, np.float64)
    col_row = np.full(N + 1, -1, np.int64)  # row matched to column; N is virtual
    way = np.zeros(N + 1, np.int64)
    for i in range(K):
        col_row[N] = i
        j0 = N
        minv = np.full(N + 1, np.inf, np.float64)
        used = np.zeros(N + 1, np.bool_)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            delta = np.inf
            j1 = -1
            for j in range(N):
                if not used[j]:
                    cur = cost[i0, j] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(N + 1):
                if used[j]:
                    if col_row[j] >= 0:
                        u[col_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if col_row[j0] < 0:
                break
        while j0 != N:
            j1 = way[j0]
            col_row[j0] = col_row[j1]
            j0 = j1
    row_col = np.full(K, -1, np.int64)
    for j in range(N):
        if col_row[j] >= 0:
            row_col[col_row[j]] = j
    return row_col


def _corners(boxes):
    cx, cy, w, h = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    return cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0


def _iou_matrix_plain(a, b):
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = np.maximum(
        np.minimum(ax1[:, None], bx1[None, :]) - np.maximum(ax0[:, None], bx0[None, :]),
        0.0,
    )
    ih = np.maximum(
        np.minimum(ay1[:, None], by1[None, :]) - np.maximum(ay0[:, None], by0[None, :]),
        0.0,
    )
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def _giou_matrix_plain(a, b):
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = np.maximum(
        np.minimum(ax1[:, None], bx1[None, :]) - np.maximum(ax0[:, None], bx0[None, :]),
        0.0,
    )
    ih = np.maximum(
        np.minimum(ay1[:, None], by1[None, :]) - np.maximum(ay0[:, None], by0[None, :]),
        0.0,
    )
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a[:, None] + area_b[None, :] - inter
    ew = np.maximum(ax1[:, None], bx1[None, :]) - np.minimum(ax0[:, None], bx0[None, :])
    eh = np.maximum(ay1[:, None], by1[None, :]) - np.minimum(ay0[:, None], by0[None, :])
    enclose = ew * eh
    return inter / union - (enclose - union) / enclose


def _l1_matrix_plain(a, b):
    return np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)


def _rasterize_boxes_plain(image, x0, y0, w, h, pattern, level):
    # Patterns: 0 solid, 1 horizontal stripes, 2 checkerboard. Stripe and
    # checker "off" cells get a quarter of the class level so the box stays
    # visible against the zero background. Later boxes overwrite earlier ones.
    K = x0.shape[0]
    for k in range(K):
        lv = level[k]
        dim = 0.25 * lv
        for yy in range(y0[k], y0[k] + h[k]):
            for xx in range(x0[k], x0[k] + w[k]):
                if pattern[k] == 0:
                    image[yy, xx] = lv
                elif pattern[k] == 1:
                    image[yy, xx] = lv if (yy - y0[k]) % 2 == 0 else dim
                else:
                    image[yy, xx] = lv if (xx - x0[k] + yy - y0[k]) % 2 == 0 else dim
    return image


if NUMBA_ACTIVE:
    _assign_min_cost_fast = njit(cache=True)(_assign_min_cost_plain)

    @njit(cache=True)
    def _iou_matrix_fast(a, b):
        K = a.shape[0]
        N = b.shape[0]
        out = np.empty((K, N), np.float64)
        for i in range(K):
            ax0 = a[i, 0] - a[i, 2] / 2.0
            ay0 = a[i, 1] - a[i, 3] / 2.0
            ax1 = a[i, 0] + a[i, 2] / 2.0
            ay1 = a[i, 1] + a[i, 3] / 2.0
            area_a = (ax1 - ax0) * (ay1 - ay0)
            for j in range(N):
                bx0 = b[j, 0] - b[j, 2] / 2.0
                by0 = b[j, 1] - b[j, 3] / 2.0
                bx1 = b[j, 0] + b[j, 2] / 2.0
                by1 = b[j, 1] + b[j, 3] / 2.0
                iw = min(ax1, bx1) - max(ax0, bx0)
                if iw < 0.0:
                    iw = 0.0
                ih = min(ay1, by1) - max(ay0, by0)
                if ih < 0.0:
                    ih = 0.0
                inter = iw * ih
                area_b = (bx1 - bx0) * (by1 - by0)
                union = area_a + area_b - inter
                out[i, j] = inter / union
        return out

    @njit(cache=True)
    def _giou_matrix_fast(a, b):
        K = a.shape[0]
        N = b.shape[0]
        out = np.empty((K, N), np.float64)
        for i in range(K):
            ax0 = a[i, 0] - a[i, 2] / 2.0
            ay0 = a[i, 1] - a[i, 3] / 2.0
            ax1 = a[i, 0] + a[i, 2] / 2.0
            ay1 = a[i, 1] + a[i, 3] / 2.0
            area_a = (ax1 - ax0) * (ay1 - ay0)
            for j in range(N):
                bx0 = b[j, 0] - b[j, 2] / 2.0
                by0 = b[j, 1] - b[j, 3] / 2.0
                bx1 = b[j, 0] + b[j, 2] / 2.0
                by1 = b[j, 1] + b[j, 3] / 2.0
                iw = min(ax1, bx1) - max(ax0, bx0)
                if iw < 0.0:
                    iw = 0.0
                ih = min(ay1, by1) - max(ay0, by0)
                if ih < 0.0:
                    ih = 0.0
                inter = iw * ih
                area_b = (bx1 - bx0) * (by1 - by0)
                union = area_a + area_b - inter
                ew = max(ax1, bx1) - min(ax0, bx0)
                eh = max(ay1, by1) - min(ay0, by0)
                enclose = ew * eh
                out[i, j] = inter / union - (enclose - union) / enclose
        return out

    @njit(cache=True)
    def _l1_matrix_fast(a, b):
        K = a.shape[0]
        N = b.shape[0]
        D = a.shape[1]
        out = np.empty((K, N), np.float64)
        for i in range(K):
            for j in range(N):
                acc = 0.0
                for d in range(D):
                    acc += abs(a[i, d] - b[j, d])
                out[i, j] = acc
        return out

    _rasterize_boxes_fast = njit(cache=True)(_rasterize_boxes_plain)


def _active(fast_name, plain_fn):
    if NUMBA_ACTIVE:
        return globals()[fast_name]
    return plain_fn


_assign_impl = _active("_assign_min_cost_fast", _assign_min_cost_plain)
_iou_impl = _active("_iou_matrix_fast", _iou_matrix_plain)
_giou_impl = _active("_giou_matrix_fast", _giou_matrix_plain)
_l1_impl = _active("_l1_matrix_fast", _l1_matrix_plain)
_raster_impl = _active("_rasterize_boxes_fast", _rasterize_boxes_plain)


def assign_min_cost(cost):
    """Min-cost assignment for a (K, N) matrix with K <= N.

    Returns an int64 array of length K mapping each row to its column.
    Among equal-reduced-cost columns the scan prefers the lowest index,
    which keeps the result deterministic; global tie-breaking across
    whole assignments is handled by the caller.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] > cost.shape[1]:
        raise ValueError(f"cost must be (K, N) with K <= N, got {cost.shape}")
    return _assign_impl(cost)


def iou_matrix(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _iou_impl(a, b)


def giou_matrix(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _giou_impl(a, b)


def l1_matrix(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _l1_impl(a, b)


def rasterize_boxes(image, x0, y0, w, h, pattern, level):
    return _raster_impl(
        image,
        np.ascontiguousarray(x0, dtype=np.int64),
        np.ascontiguousarray(y0, dtype=np.int64),
        np.ascontiguousarray(w, dtype=np.int64),
        np.ascontiguousarray(h, dtype=np.int64),
        np.ascontiguousarray(pattern, dtype=np.int64),
        np.ascontiguousarray(level, dtype=np.float64),
    )
