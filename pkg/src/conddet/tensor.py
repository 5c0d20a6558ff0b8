"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is implicit: each operation's output keeps references to its
parent tensors plus a closure that pushes the output gradient back to
them. ``backward()`` on a scalar root topologically sorts the reachable
graph and runs the closures in reverse. A graph can be walked once; the
walk releases the closures, and a second backward through any released
node raises ``GraphError``.

Shape rules are strict: binary operations require identical shapes, and
the only implicit broadcast is scalar-against-tensor (a Python number or
a size-1 tensor). Every forward result is checked for NaN/Inf so numeric
blowups fail at the operation that produced them rather than epochs later.
"""

import math

import numpy as np


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class GraphError(TensorError):
    pass


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "_released")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bw = None
        self._released = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a size-1 tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            if node._released:
                raise GraphError(
                    "backward already consumed part of this graph; rebuild the "
                    "forward pass before calling backward again"
                )
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bw is not None:
                node._bw(node.grad)
                node._bw = None
                node._parents = ()
                node._released = True

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the module-level functions are the real API.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


def _node(data, parents, bw, op):
    """Wrap an op result; record the graph edge only if a parent needs grad."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._released = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._bw = bw
    else:
        out.requires_grad = False
        out._parents = ()
        out._bw = None
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _pair(a, b, op):
    """Validate a binary op's operands; one side may be a scalar."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.shape == b.shape:
        return a, b
    if a.size == 1 or b.size == 1:
        return a, b
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _fit(g, shape):
    """Reduce a gradient down to a scalar operand's shape when broadcast."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b):
    a, b = _pair(a, b, "add")

    def bw(g):
        _accum(a, _fit(g, a.shape))
        _accum(b, _fit(g, b.shape))

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _pair(a, b, "sub")

    def bw(g):
        _accum(a, _fit(g, a.shape))
        _accum(b, _fit(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _pair(a, b, "mul")

    def bw(g):
        _accum(a, _fit(g * b.data, a.shape))
        _accum(b, _fit(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b, "div")

    def bw(g):
        _accum(a, _fit(g / b.data, a.shape))
        _accum(b, _fit(-g * a.data / (b.data * b.data), b.shape))

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _node(out, (a, b), bw, "div")


def neg(a):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bw, "neg")


def matmul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner sizes differ, {a.shape} @ {b.shape}")
    elif a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"matmul: batched shapes differ, {a.shape} @ {b.shape}")
    else:
        raise ShapeError(f"matmul needs two 2-d or two 3-d tensors, got {a.shape} @ {b.shape}")

    def bw(g):
        _accum(a, g @ b.data.swapaxes(-1, -2))
        _accum(b, a.data.swapaxes(-1, -2) @ g)

    return _node(a.data @ b.data, (a, b), bw, "matmul")


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accum(a, g * y * (1.0 - y))

    return _node(y, (a,), bw, "sigmoid")


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), bw, "relu")


def texp(a):
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)

    def bw(g):
        _accum(a, g * y)

    return _node(y, (a,), bw, "exp")


def tlog(a):
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)

    def bw(g):
        _accum(a, g / a.data)

    return _node(y, (a,), bw, "log")


def tsin(a):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, g * np.cos(a.data))

    return _node(np.sin(a.data), (a,), bw, "sin")


def tcos(a):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, -g * np.sin(a.data))

    return _node(np.cos(a.data), (a,), bw, "cos")


def tabs(a):
    a = _as_tensor(a)

    def bw(g):
        _accum(a, g * np.sign(a.data))

    return _node(np.abs(a.data), (a,), bw, "abs")


def pow_const(a, p):
    """Elementwise a**p for a constant exponent p."""
    a = _as_tensor(a)
    p = float(p)
    y = a.data**p

    def bw(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _node(y, (a,), bw, "pow")


def maximum(a, b):
    a, b = _pair(a, b, "maximum")
    take_a = a.data >= b.data  # ties send gradient to the first operand

    def bw(g):
        _accum(a, _fit(g * take_a, a.shape))
        _accum(b, _fit(g * ~take_a, b.shape))

    return _node(np.maximum(a.data, b.data), (a, b), bw, "maximum")


def minimum(a, b):
    a, b = _pair(a, b, "minimum")
    take_a = a.data <= b.data

    def bw(g):
        _accum(a, _fit(g * take_a, a.shape))
        _accum(b, _fit(g * ~take_a, b.shape))

    return _node(np.minimum(a.data, b.data), (a, b), bw, "minimum")


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is zero outside the open interval."""
    a = _as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)

    def bw(g):
        _accum(a, g * inside)

    return _node(np.clip(a.data, lo, hi), (a,), bw, "clip")


def softmax(a, axis=-1):
    a = _as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * y)

    return _node(y, (a,), bw, "softmax")


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base):
            raise ShapeError("concat: rank mismatch")
        for ax, (m, n) in enumerate(zip(base, other)):
            if ax != (axis % len(base)) and m != n:
                raise ShapeError("concat: non-axis extents differ")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            _accum(t, g[tuple(idx)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def slice_axis(a, axis, start, stop):
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _node(a.data[idx].copy(), (a,), bw, "slice")


def index_rows(a, indices):
    """Gather rows along the first axis; duplicate indices accumulate."""
    a = _as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise ShapeError("index_rows needs a 1-d index array")

    def bw(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        _accum(a, full)

    return _node(a.data[indices].copy(), (a,), bw, "index_rows")


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape

    def bw(g):
        _accum(a, g.reshape(old))

    return _node(a.data.reshape(shape).copy(), (a,), bw, "reshape")


def transpose(a):
    """Swap the last two axes (plain transpose for 2-d)."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose needs at least 2 dimensions")

    def bw(g):
        _accum(a, g.swapaxes(-1, -2))

    return _node(a.data.swapaxes(-1, -2).copy(), (a,), bw, "transpose")


def tsum(a, axis=None):
    a = _as_tensor(a)
    if axis is None:
        def bw(g):
            _accum(a, np.broadcast_to(g, a.shape).copy())

        return _node(a.data.sum().reshape(()), (a,), bw, "sum")
    ax = axis % a.ndim

    def bw_axis(g):
        _accum(a, np.broadcast_to(np.expand_dims(g, ax), a.shape).copy())

    return _node(a.data.sum(axis=ax), (a,), bw_axis, "sum")


def tmean(a, axis=None):
    a = _as_tensor(a)
    if axis is None:
        n = a.size
        def bw(g):
            _accum(a, np.broadcast_to(g / n, a.shape).copy())

        return _node(a.data.mean().reshape(()), (a,), bw, "mean")
    ax = axis % a.ndim
    n = a.shape[ax]

    def bw_axis(g):
        _accum(a, np.broadcast_to(np.expand_dims(g / n, ax), a.shape).copy())

    return _node(a.data.mean(axis=ax), (a,), bw_axis, "mean")


def add_rows(x, b):
    """Add a (d,) vector to every row of a (..., d) tensor."""
    x = _as_tensor(x)
    b = _as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_rows: {x.shape} + {b.shape}")

    def bw(g):
        _accum(x, g)
        _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _node(x.data + b.data, (x, b), bw, "add_rows")


def scale_rows(x, s):
    """Multiply each row of a (n, d) tensor by the matching (n, 1) scalar."""
    x = _as_tensor(x)
    s = _as_tensor(s)
    if x.ndim != 2 or s.shape != (x.shape[0], 1):
        raise ShapeError(f"scale_rows: {x.shape} * {s.shape}")

    def bw(g):
        _accum(x, g * s.data)
        _accum(s, (g * x.data).sum(axis=1, keepdims=True))

    return _node(x.data * s.data, (x, s), bw, "scale_rows")


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then apply elementwise gain and bias."""
    x = _as_tensor(x)
    gain = _as_tensor(gain)
    bias = _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gx - m1 - xhat * m2))

    return _node(y, (x, gain, bias), bw, "layer_norm")


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def scalar(value):
    return Tensor(float(value))


def xavier_limit(fan_in, fan_out):
    return math.sqrt(6.0 / (fan_in + fan_out))
