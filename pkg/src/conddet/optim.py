"""Adam with decoupled weight decay.

The decay multiplies the parameter by (1 - lr * wd) before the adaptive
update, so it never enters the moment estimates. Parameters are organized
into named groups, each with its own learning rate; the training loop
rescales group rates in place for schedule drops. Parameters whose grad is
None (unused in the current graph) are skipped entirely, decay included.
"""

import numpy as np

from .tensor import NonFiniteError


class AdamW:
    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        """groups: list of {"name": str, "lr": float, "params": [(name, Tensor)]}."""
        self.groups = groups
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {}
        self._v = {}
        seen = set()
        for g in groups:
            for name, p in g["params"]:
                if name in seen:
                    raise ValueError(f"duplicate parameter name {name!r}")
                seen.add(name)
                self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)

    def zero_grad(self):
        for g in self.groups:
            for _, p in g["params"]:
                p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for group in self.groups:
            lr = group["lr"]
            for name, p in group["params"]:
                if p.grad is None:
                    continue
                g = p.grad
                if g.shape != p.data.shape:
                    raise ValueError(f"gradient shape mismatch for {name!r}")
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
                p.data *= 1.0 - lr * self.weight_decay
                m = self._m[name]
                v = self._v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def scale_lr(self, factor):
        for group in self.groups:
            group["lr"] *= factor

    def state_arrays(self):
        """Moment buffers plus the step counter, keyed for checkpointing."""
        out = {}
        for name in self._m:
            out[f"opt.m.{name}"] = self._m[name]
            out[f"opt.v.{name}"] = self._v[name]
        out["opt.step"] = np.array(float(self.step_count))
        return out

    def load_state(self, arrays):
        for name in self._m:
            mk, vk = f"opt.m.{name}", f"opt.v.{name}"
            if mk not in arrays or vk not in arrays:
                raise KeyError(f"optimizer state missing for {name!r}")
            if arrays[mk].shape != self._m[name].shape:
                raise ValueError(f"optimizer state shape mismatch for {name!r}")
            self._m[name] = arrays[mk].astype(np.float64).copy()
            self._v[name] = arrays[vk].astype(np.float64).copy()
        self.step_count = int(arrays["opt.step"])
