"""Small parameterized building blocks on top of the tensor core."""

import numpy as np

from . import tensor as T


class Linear:
    """Affine map on row vectors: y = x @ w + b. Xavier-uniform weights."""

    def __init__(self, rng, d_in, d_out, bias=True):
        self.w = T.Tensor(rng.xavier(d_in, d_out), requires_grad=True)
        self.b = T.Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.w)
        if self.b is not None:
            y = T.add_rows(y, self.b)
        return y

    def weight_only(self, x):
        """Apply the weight matrix without the bias term."""
        return T.matmul(x, self.w)

    def zero_init(self):
        self.w.data[:] = 0.0
        if self.b is not None:
            self.b.data[:] = 0.0

    def named_params(self, prefix):
        out = [(f"{prefix}.w", self.w)]
        if self.b is not None:
            out.append((f"{prefix}.b", self.b))
        return out


class FFN:
    """Stack of Linear layers with ReLU between them (none after the last)."""

    def __init__(self, rng, dims, zero_final=False):
        if len(dims) < 2:
            raise ValueError("FFN needs at least input and output dims")
        self.layers = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        if zero_final:
            self.layers[-1].zero_init()

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = T.relu(x)
        return x

    def named_params(self, prefix):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_params(f"{prefix}.{i}"))
        return out


class LayerNorm:
    def __init__(self, d):
        self.gain = T.Tensor(np.ones(d), requires_grad=True)
        self.bias = T.Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)

    def named_params(self, prefix):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]
