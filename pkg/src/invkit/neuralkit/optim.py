"""First-order optimizers acting in place on parameter tensors."""

from __future__ import annotations

import numpy as np


class MissingGradientError(RuntimeError):
    pass


class Optimizer:
    def __init__(self, params):
        self.params = list(params)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def _grads(self):
        grads = []
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise MissingGradientError(f"parameter {i} has no gradient; run backward first")
            grads.append(p.grad)
        return grads

    def step(self):
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr=1e-2):
        super().__init__(params)
        self.lr = lr

    def step(self):
        for p, g in zip(self.params, self._grads()):
            p.data = p.data - self.lr * g


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        grads = self._grads()
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def make_optimizer(kind: str, params, lr: float, **kw) -> Optimizer:
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr, **kw)
    raise ValueError(f"unknown optimizer {kind!r}")


def step(optim: Optimizer, params=None):
    """Apply one update; ``params`` is accepted for symmetry and must match ``optim.params``."""
    if params is not None and [id(p) for p in params] != [id(p) for p in optim.params]:
        raise ValueError("parameter list does not match the optimizer")
    optim.step()
    return optim.params
