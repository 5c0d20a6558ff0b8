"""Bipartite matching between predictions and ground truth, and the
classification/box losses trained through it.

Boxes are (cx, cy, w, h) in normalized coordinates everywhere; corner
form exists only inside the IoU/GIoU computations. Matching is solved by
a shortest-augmenting-path assignment and then refined to the unique
lexicographically smallest optimum (lowest prediction index wins, row by
row), so tests and reruns always see the same assignment. A brute-force
enumerator with the same tie rule serves as the oracle.

Totals of candidate assignments are always accumulated in ascending row
order ("canonical total") so equal assignments compare bit-equal; two
different assignments whose exact totals coincide are treated as tied
when within 1e-12 relative.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import tensor as T

_TIE_REL = 1e-12


@dataclass
class GroundTruthSet:
    """K target boxes (cxcywh, normalized) with class indices."""

    boxes: np.ndarray  # (K, 4) float64
    classes: np.ndarray  # (K,) int64

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if self.boxes.shape[0] != self.classes.shape[0]:
            raise ValueError("box and class counts differ")
        if self.boxes.size and (
            self.boxes.min() < 0.0
            or self.boxes.max() > 1.0
            or (self.boxes[:, 2:] <= 0.0).any()
        ):
            raise ValueError("boxes must lie in [0,1] with positive extents")

    @property
    def count(self):
        return self.boxes.shape[0]


def giou(a, b):
    """Generalized IoU of two cxcywh boxes: IoU minus the fraction of the
    enclosing box not covered by the union. Range [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a[2] <= 0 or a[3] <= 0 or b[2] <= 0 or b[3] <= 0:
        raise ValueError("degenerate box (non-positive extent)")
    return float(_kernels.giou_matrix(a[None, :], b[None, :])[0, 0])


def canonical_total(cost, cols):
    """Assignment total accumulated in ascending row order."""
    total = 0.0
    for i, j in enumerate(cols):
        total += float(cost[i, j])
    return total


def _tie_tol(total):
    return _TIE_REL * max(1.0, abs(total))


def _validate_cost(cost):
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-d matrix")
    K, N = cost.shape
    if K > N:
        raise ValueError(f"more rows than columns: {K} > {N}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    return cost


def hungarian_match(cost):
    """Minimum-cost injective assignment of rows to columns, K <= N.

    Returns int64 cols of length K. Among equal-cost optima the result is
    the lexicographically smallest column sequence: fixing rows in order,
    each row takes the lowest column that still allows an optimal
    completion (checked by re-solving the remaining subproblem).
    """
    cost = _validate_cost(cost)
    K, N = cost.shape
    if K == 0:
        return np.zeros(0, dtype=np.int64)
    best_total = canonical_total(cost, _kernels.assign_min_cost(cost))
    chosen = np.full(K, -1, dtype=np.int64)
    free = list(range(N))
    prefix = 0.0
    for i in range(K):
        rows_left = K - i - 1
        for pos, j in enumerate(free):
            candidate = prefix + float(cost[i, j])
            if rows_left:
                rest_cols = np.array(free[:pos] + free[pos + 1 :], dtype=np.int64)
                sub = cost[np.arange(i + 1, K)[:, None], rest_cols[None, :]]
                sub_cols = _kernels.assign_min_cost(sub)
                candidate += canonical_total(sub, sub_cols)
            if candidate <= best_total + _tie_tol(best_total):
                chosen[i] = j
                prefix += float(cost[i, j])
                free.pop(pos)
                break
        if chosen[i] < 0:  # cannot happen: the optimal completion qualifies
            raise RuntimeError("assignment refinement failed to fix a row")
    return chosen


def brute_force_match(cost):
    """Exhaustive assignment oracle with the same tie rule; K <= 8."""
    cost = _validate_cost(cost)
    K, N = cost.shape
    if K > 8:
        raise ValueError(f"brute force limited to K <= 8, got {K}")
    if K == 0:
        return np.zeros(0, dtype=np.int64)
    rows = cost.tolist()  # plain floats; same ascending-row accumulation
    best_cols = None
    best_total = np.inf
    for perm in itertools.permutations(range(N), K):
        total = 0.0
        for i, j in enumerate(perm):
            total += rows[i][j]
        if best_cols is None or total < best_total - _tie_tol(best_total):
            best_total = total
            best_cols = perm
    return np.array(best_cols, dtype=np.int64)


def _clamped_probs(logits):
    x = np.asarray(logits, dtype=np.float64)
    # exp of -|x| never overflows; both branches equal 1/(1+e^-x)
    e = np.exp(-np.abs(x))
    p = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(p, 1e-7, 1.0 - 1e-7)


def matching_cost(logits, boxes, truth, weights):
    """(K, N) cost: weighted class cost + L1 + (1 - GIoU) per pair.

    The class cost of prediction i for truth class c is the focal positive
    term minus the focal negative term of p_ic, so confident correct
    predictions are rewarded relative to their cost as a negative.
    """
    p = _clamped_probs(logits)
    alpha, gamma = weights.focal_alpha, weights.focal_gamma
    pos = alpha * (1.0 - p) ** gamma * (-np.log(p))
    neg = (1.0 - alpha) * p**gamma * (-np.log(1.0 - p))
    class_cost = (pos - neg)[:, truth.classes].T  # (K, N)
    boxes = np.asarray(boxes, dtype=np.float64)
    l1 = _kernels.l1_matrix(truth.boxes, boxes)
    g = _kernels.giou_matrix(truth.boxes, boxes)
    return weights.w_class * class_cost + weights.w_l1 * l1 + weights.w_giou * (1.0 - g)


@dataclass
class LossWeights:
    w_class: float = 2.0
    w_l1: float = 5.0
    w_giou: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0


def focal_loss(logits, assignment, truth, alpha=0.25, gamma=2.0):
    """Per-class sigmoid focal loss over the full (N, C) logit matrix.

    Matched (prediction, class) pairs are the positives; every other pair
    is a negative. Normalized by the object count (1 when K = 0). With
    gamma=0, alpha=0.5 this is half the summed binary cross-entropy.
    """
    n, c = logits.shape
    target = np.zeros((n, c))
    for row, col in enumerate(assignment):
        target[col, truth.classes[row]] = 1.0
    p = T.clip(T.sigmoid(logits), 1e-7, 1.0 - 1e-7)
    one_minus = T.sub(1.0, p)
    pos = T.mul(T.mul(T.pow_const(one_minus, gamma), T.neg(T.tlog(p))), alpha)
    neg = T.mul(T.mul(T.pow_const(p, gamma), T.neg(T.tlog(one_minus))), 1.0 - alpha)
    tgt = T.Tensor(target)
    per_pair = T.add(T.mul(tgt, pos), T.mul(T.sub(1.0, tgt), neg))
    return T.div(T.tsum(per_pair), float(max(truth.count, 1)))


def giou_pairs(pred, target):
    """Differentiable row-wise GIoU of matched (K, 4) cxcywh boxes."""

    def corners(b):
        cx = T.slice_axis(b, 1, 0, 1)
        cy = T.slice_axis(b, 1, 1, 2)
        w = T.slice_axis(b, 1, 2, 3)
        h = T.slice_axis(b, 1, 3, 4)
        return (
            T.sub(cx, T.mul(w, 0.5)),
            T.sub(cy, T.mul(h, 0.5)),
            T.add(cx, T.mul(w, 0.5)),
            T.add(cy, T.mul(h, 0.5)),
            T.mul(w, h),
        )

    ax0, ay0, ax1, ay1, area_a = corners(pred)
    bx0, by0, bx1, by1, area_b = corners(target)
    iw = T.maximum(T.sub(T.minimum(ax1, bx1), T.maximum(ax0, bx0)), 0.0)
    ih = T.maximum(T.sub(T.minimum(ay1, by1), T.maximum(ay0, by0)), 0.0)
    inter = T.mul(iw, ih)
    union = T.sub(T.add(area_a, area_b), inter)
    enclose = T.mul(
        T.sub(T.maximum(ax1, bx1), T.minimum(ax0, bx0)),
        T.sub(T.maximum(ay1, by1), T.minimum(ay0, by0)),
    )
    return T.sub(T.div(inter, union), T.div(T.sub(enclose, union), enclose))


def box_losses(boxes, assignment, truth):
    """(L1, 1-GIoU) losses over matched pairs, each averaged over K."""
    k = truth.count
    matched = T.index_rows(boxes, assignment)
    gt = T.Tensor(truth.boxes)
    l1 = T.div(T.tsum(T.tabs(T.sub(matched, gt))), float(k))
    g = giou_pairs(matched, gt)
    gl = T.div(T.tsum(T.sub(1.0, g)), float(k))
    return l1, gl


def set_loss(outputs, truth, weights):
    """Deep-supervised loss: per decoder layer, match that layer's
    predictions to the truth and sum the weighted component losses.

    Returns (total scalar Tensor, per-component float breakdown). The
    assignment itself carries no gradient; only matched pairs do.
    """
    total = None
    breakdown = {"class": 0.0, "l1": 0.0, "giou": 0.0}
    for logits, boxes in zip(outputs.logits, outputs.boxes):
        if truth.count > 0:
            cost = matching_cost(logits.data, boxes.data, truth, weights)
            assignment = hungarian_match(cost)
        else:
            assignment = np.zeros(0, dtype=np.int64)
        fl = focal_loss(logits, assignment, truth, weights.focal_alpha, weights.focal_gamma)
        layer_total = T.mul(fl, weights.w_class)
        breakdown["class"] += fl.item()
        if truth.count > 0:
            l1, gl = box_losses(boxes, assignment, truth)
            layer_total = T.add(layer_total, T.add(T.mul(l1, weights.w_l1), T.mul(gl, weights.w_giou)))
            breakdown["l1"] += l1.item()
            breakdown["giou"] += gl.item()
        total = layer_total if total is None else T.add(total, layer_total)
    return total, breakdown
