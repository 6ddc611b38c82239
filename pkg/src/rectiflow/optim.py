"""AdamW with decoupled weight decay and bias correction."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError


class AdamW:
    def __init__(self, named_params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=1e-2):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params:
            if not p.requires_grad:
                continue
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeMismatchError(
                    f"gradient for {name}: {g.shape} != parameter {p.data.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            denom = np.sqrt(v / bc2)
            denom += self.eps
            update = m / (bc1 * denom)
            update += self.weight_decay * p.data
            update *= self.lr
            p.data -= update

    def state_tensors(self):
        """Moment buffers as named arrays, for checkpointing."""
        out = {}
        for name, _ in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors, step_count):
        for name, p in self.params:
            for store, key in ((self.m, f"opt.m.{name}"), (self.v, f"opt.v.{name}")):
                arr = np.asarray(tensors[key], dtype=np.float32)
                if arr.shape != p.data.shape:
                    raise ShapeMismatchError(
                        f"optimizer moment {key}: {arr.shape} != {p.data.shape}")
                store[name] = np.ascontiguousarray(arr)
        self.step_count = int(step_count)

    def hyperparams(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "weight_decay": self.weight_decay,
                "step": self.step_count}
