"""Central-difference verification of reverse-mode gradients.

``finite_diff_check`` takes a scalar-valued function of a list of
parameter arrays, runs it twice to probe determinism, computes reverse-mode
gradients once, then compares them coordinate by coordinate against
(f(x+h) - f(x-h)) / 2h. The reported figure is the worst relative error

    |g_ad - g_fd| / max(1, |g_fd|)

over every checked coordinate, so it is meaningful for both tiny and large
gradient magnitudes. ``max_coords`` caps the per-parameter coordinate count
for expensive functions; the subset is drawn deterministically from the
given seed.
"""

import numpy as np

from .rng import Rng
from .tensor import Tensor, TensorError


class DeterminismError(TensorError):
    pass


def finite_diff_check(fn, params, h=1e-5, max_coords=None, seed=0):
    """Worst relative error between reverse-mode and central-difference grads.

    fn: callable taking a list of Tensors, returning a scalar Tensor.
    params: list of numpy arrays, the points to differentiate at.
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]

    leaves = [Tensor(p.copy(), requires_grad=True) for p in params]
    root = fn(leaves)
    value = root.item()
    probe = fn([Tensor(p.copy(), requires_grad=True) for p in params]).item()
    if value != probe:
        raise DeterminismError(
            f"function is not deterministic: {value!r} != {probe!r} on identical input"
        )
    root.backward()

    def eval_at(arrays):
        return fn([Tensor(a) for a in arrays]).item()

    worst = 0.0
    rng = Rng(seed)
    for pi, base in enumerate(params):
        grad = leaves[pi].grad
        if grad is None:
            grad = np.zeros_like(base)
        gflat = grad.reshape(-1)
        n = base.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, max_coords).tolist()
        else:
            coords = range(n)
        for ci in coords:
            plus = [p.copy() for p in params]
            minus = [p.copy() for p in params]
            plus[pi].reshape(-1)[ci] += h
            minus[pi].reshape(-1)[ci] -= h
            fd = (eval_at(plus) - eval_at(minus)) / (2.0 * h)
            rel = abs(gflat[ci] - fd) / max(1.0, abs(fd))
            if rel > worst:
                worst = rel
    return worst
