"""Sinusoidal embeddings for 2-d positions in the unit square.

A d-dimensional embedding splits into an x half and a y half. Each half
uses d/4 geometric frequencies: frequency i maps coordinate u to the angle

    2*pi*u / temperature**(2*i / (d/2))

and contributes an interleaved (sin, cos) pair, sine at the even slot.
Nearby positions therefore get high inner products: the self inner product
is exactly d/2 and strictly dominates the product with any other position.

``grid_embeddings`` covers the encoder's key grid with one embedding per
cell center. ``embed_points_op`` is the autodiff version used for query
positions, so gradients can flow back into predicted or learned reference
points. Both share the same frequency table and agree to float rounding.
"""

import numpy as np

from . import tensor as T


def _check_dim(d):
    if d % 4 != 0 or d <= 0:
        raise ValueError(f"embedding dimension must be a positive multiple of 4, got {d}")


def frequency_scales(d, temperature=10000.0):
    """The d/4 angle scales: scale[i] = 2*pi / temperature**(2i/(d/2))."""
    _check_dim(d)
    i = np.arange(d // 4, dtype=np.float64)
    return 2.0 * np.pi / temperature ** (2.0 * i / (d / 2.0))


def embed_points(points, d, temperature=10000.0):
    """Embed (n, 2) unit-square points into (n, d) numpy arrays."""
    points = np.asarray(points, dtype=np.float64)
    scales = frequency_scales(d, temperature)
    out = []
    for axis in range(2):
        ang = points[:, axis : axis + 1] * scales[None, :]  # (n, d/4)
        pair = np.stack([np.sin(ang), np.cos(ang)], axis=2)  # (n, d/4, 2)
        out.append(pair.reshape(points.shape[0], d // 2))
    return np.concatenate(out, axis=1)


def embed_points_op(points, d, temperature=10000.0):
    """Same embedding as a graph op; points is an (n, 2) Tensor."""
    scales = frequency_scales(d, temperature)
    n = points.shape[0]
    scale_row = T.Tensor(scales[None, :])
    halves = []
    for axis in range(2):
        u = T.slice_axis(points, 1, axis, axis + 1)  # (n, 1)
        ang = T.matmul(u, scale_row)  # (n, d/4)
        s = T.reshape(T.tsin(ang), (n, d // 4, 1))
        c = T.reshape(T.tcos(ang), (n, d // 4, 1))
        halves.append(T.reshape(T.concat([s, c], axis=2), (n, d // 2)))
    return T.concat(halves, axis=1)


def grid_cell_centers(h, w):
    """(h*w, 2) centers of a h-by-w cell grid, row-major, unit coordinates."""
    ys, xs = np.meshgrid(
        (np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij"
    )
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)


def grid_embeddings(h, w, d, temperature=10000.0):
    """Embeddings for every cell center of a h-by-w grid, shape (h*w, d)."""
    return embed_points(grid_cell_centers(h, w), d, temperature)
