"""Regularizers ``r(x)`` and their proximal maps.

``prox(reg, z, t)`` solves ``argmin_x 0.5 * ||x - z||^2 + t * r(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

KINDS = ("zero", "tikhonov", "l1", "tv")


@dataclass(frozen=True)
class Regularizer:
    kind: str = "zero"
    lam: float = 0.0
    inner_iters: int = 20

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if not self.lam >= 0:
            raise ValueError(f"regularization weight must be nonnegative, got {self.lam}")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "Regularizer":
        """Parse config strings like ``"tv:0.1"``, ``"l1:0.05"`` or ``"tv:0.1:50"``."""
        parts = text.strip().split(":")
        kind = parts[0]
        if kind == "zero":
            return cls("zero")
        try:
            lam = float(parts[1])
            iters = int(parts[2]) if len(parts) > 2 else 20
        except (IndexError, ValueError) as exc:
            raise ValueError(f"malformed regularizer spec {text!r}") from exc
        return cls(kind, lam, iters)

    def __str__(self):
        if self.kind == "zero":
            return "zero"
        if self.kind == "tv" and self.inner_iters != 20:
            return f"tv:{self.lam!r}:{self.inner_iters}"
        return f"{self.kind}:{self.lam!r}"

    def value(self, x) -> float:
        return value(self, x)

    def prox(self, z, t: float):
        return prox(self, z, t)


def tv(x) -> float:
    """Anisotropic total variation with periodic boundary."""
    x = np.asarray(x, dtype=np.float64)
    dh = np.roll(x, -1, axis=-1) - x
    dv = np.roll(x, -1, axis=-2) - x
    return float(np.abs(dh).sum() + np.abs(dv).sum())


def value(reg: Regularizer, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if reg.kind == "zero":
        return 0.0
    if reg.kind == "tikhonov":
        return 0.5 * reg.lam * float(np.sum(x * x))
    if reg.kind == "l1":
        return reg.lam * float(np.abs(x).sum())
    if x.ndim == 1:
        x = x[None, :]
    return reg.lam * tv(x)


def soft_threshold(z, thresh):
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


def prox(reg: Regularizer, z, t: float):
    if t < 0:
        raise ValueError("prox step t must be nonnegative")
    z = np.asarray(z, dtype=np.float64)
    if reg.kind == "zero" or t == 0 or reg.lam == 0:
        return z.copy()
    if reg.kind == "tikhonov":
        return z / (1.0 + t * reg.lam)
    if reg.kind == "l1":
        return soft_threshold(z, t * reg.lam)
    # TV works on 2-D slices; a stack is processed image by image
    squeeze = z.ndim == 1
    zz = np.ascontiguousarray(z[None, :] if squeeze else z)
    flat = zz.reshape((-1,) + zz.shape[-2:])
    out = np.stack([kernels.tv_prox(im, t * reg.lam, reg.inner_iters) for im in flat]).reshape(zz.shape)
    return out[0] if squeeze else out
