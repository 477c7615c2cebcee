"""Ground-truth-free risk estimates: SURE for denoising, GSURE for linear operators.

Estimators ``f`` are callables on a batch tensor ``(N, ...)`` returning a
tensor with the same number of entries per sample (SURE) or one image per
sample (GSURE). All losses are
averaged over the batch and returned as scalar tensors, so they can be
minimized directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..neuralkit import tensor as T
from ..neuralkit.tensor import Tensor
from ..operators import ForwardOperator, OperatorError
from ..solvers import cg


@dataclass(frozen=True)
class DivergenceMode:
    """``exact`` probes every unit vector (exact for affine estimators);
    ``mc`` averages ``b^T (f(y + eps b) - f(y)) / eps`` over seeded Gaussian probes."""

    kind: str = "mc"
    probes: int = 1
    eps: float = 1e-3
    seed: int = 0

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "DivergenceMode":
        parts = text.split(":")
        if parts[0] in ("exact", "exact_linear"):
            return cls("exact", seed=seed)
        if parts[0] in ("mc", "monte_carlo"):
            try:
                probes = int(parts[1]) if len(parts) > 1 else 1
                eps = float(parts[2]) if len(parts) > 2 else 1e-3
            except ValueError as exc:
                raise ValueError(f"malformed divergence spec {text!r}") from exc
            return cls("mc", probes, eps, seed)
        raise ValueError(f"unknown divergence mode {text!r}")


def _call(f, y: np.ndarray) -> Tensor:
    out = f(Tensor(y))
    return out if isinstance(out, Tensor) else Tensor(np.asarray(out, dtype=np.float64))


def _as_mode(div) -> DivergenceMode:
    if isinstance(div, DivergenceMode):
        return div
    return DivergenceMode.parse(div)


def _flat(t: Tensor, n_batch) -> Tensor:
    return T.reshape(t, (n_batch, t.size // n_batch))


_EXACT_ROWS = 4096


def _weighted_divergence(f, y, fy, mode: DivergenceMode, lift=None) -> Tensor:
    """Batch sum of ``tr(L^T J_f(y))`` where ``L`` maps probe vectors to the output space.

    ``lift`` is ``L`` applied to a stack of probes (identity when None), which
    gives the plain divergence for SURE and the pseudoinverse-weighted trace
    for GSURE.
    """
    nb, d = y.shape
    lift = lift or (lambda b: b)
    if mode.kind == "exact":
        eye = np.eye(d)
        w = lift(eye).reshape(d, -1)
        flat = _flat(fy, nb)
        total = None
        # several samples' unit perturbations share one call to f
        per_call = max(1, _EXACT_ROWS // d)
        for lo in range(0, nb, per_call):
            idx = np.arange(lo, min(lo + per_call, nb))
            stacked = (y[idx][:, None, :] + eye).reshape(-1, d)
            pert = _flat(_call(f, stacked), len(stacked))
            base = T.take_rows(flat, np.repeat(idx, d))
            term = T.tsum(T.mul(pert - base, Tensor(np.tile(w, (len(idx), 1)))))
            total = term if total is None else total + term
        return total
    rng = np.random.default_rng(mode.seed)
    total = None
    for _ in range(mode.probes):
        b = rng.standard_normal(y.shape)
        pert = _flat(_call(f, y + mode.eps * b), nb)
        diff = pert - _flat(fy, nb)
        w = Tensor(lift(b).reshape(nb, -1) / mode.eps)
        term = T.tsum(T.mul(diff, w))
        total = term if total is None else total + term
    return total * (1.0 / mode.probes)


def divergence(f, y, div="exact") -> float:
    """Divergence ``sum_i d f_i / d y_i`` of ``f`` at a single input ``y``."""
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    fy = _call(f, y)
    return float(_weighted_divergence(f, y, fy, _as_mode(div)).data)


def sure_loss(f, y, sigma: float, div="exact") -> Tensor:
    """``(1/n)||y - f(y)||^2 + (2 sigma^2 / n) div f(y) - sigma^2``, batch-averaged.

    ``y`` is one sample or a batch with the batch axis first; ``n`` is the
    number of entries per sample.
    """
    if not sigma > 0:
        raise ValueError("SURE needs a known noise level sigma > 0")
    y, nb, shape = _batch(y)
    mode = _as_mode(div)
    fy = _call(f, y.reshape(shape))
    flat = _flat(fy, nb)
    if flat.shape[1] != y.shape[1]:
        raise OperatorError("SURE needs f(y) to have the dimension of y")
    n = y.shape[1]
    fit = T.sum_squares(flat - y)
    div_term = _weighted_divergence(lambda t: f(T.reshape(t, (t.shape[0],) + shape[1:])), y, fy, mode)
    total = fit * (1.0 / n) + div_term * (2.0 * sigma**2 / n)
    return total * (1.0 / nb) - sigma**2


def _batch(y):
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    shape = y.shape
    return y.reshape(shape[0], -1), shape[0], shape


class Pseudoinverse:
    """``A^+`` and the projector ``P_A = A^+ A`` by CG on the normal equations from zero."""

    def __init__(self, op: ForwardOperator, mode="cg", tol=1e-12, max_iters=500):
        if not op.linear:
            raise OperatorError("GSURE needs a linear operator")
        self.op, self.mode, self.tol, self.max_iters = op, mode, tol, max_iters
        if mode == "dense":
            eye = np.eye(op.n).reshape((op.n,) + op.input_shape)
            a = op.apply(eye).T  # m x n
            self._pinv = np.linalg.pinv(a)
        elif mode != "cg":
            raise ValueError(f"unknown pseudoinverse mode {mode!r}")

    def solve(self, y) -> np.ndarray:
        """Rows of ``y`` (..., m) mapped to images (..., H, W)."""
        y = np.asarray(y, dtype=np.float64)
        flat = y.reshape(-1, self.op.output_size)
        if self.mode == "dense":
            out = flat @ self._pinv.T
        else:
            out = np.stack([self._cg(self.op.adjoint(v)) for v in flat])
        return out.reshape(y.shape[:-1] + self.op.input_shape)

    def _cg(self, rhs):
        x, _, res = cg(self.op.normal, rhs, tol=self.tol, max_iters=self.max_iters)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("CG failed while applying the pseudoinverse")
        return x

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.solve(self.op.apply(x))


def gsure_loss(f, y, sigma: float, op: ForwardOperator, div="exact", pinv="cg") -> Tensor:
    """θ-dependent part of GSURE, batch-averaged:

    ``(1/n) [ ||P_A f(y)||^2 - 2 f(y)^T A^+ y + 2 sigma^2 tr(A^+ d f / d y) ]``

    The term ``(1/n) ||P_A x||^2`` of the full risk does not depend on ``f``
    and is omitted. ``f`` maps (N, m) measurements to (N, ...) images.
    """
    if not sigma > 0:
        raise ValueError("GSURE needs a known noise level sigma > 0")
    pi = pinv if isinstance(pinv, Pseudoinverse) else Pseudoinverse(op, pinv)
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if y.shape[-1] != op.output_size:
        raise OperatorError(f"measurement length {y.shape[-1]} != {op.output_size}")
    nb = y.shape[0]
    n = op.n
    fy = _call(f, y)
    flat = _flat(fy, nb)
    if flat.shape[1] != n:
        raise OperatorError("GSURE needs f(y) to be an image of the operator input shape")
    proj = T.linear_map(
        flat,
        lambda d: pi.project(d.reshape((nb,) + op.input_shape)).reshape(nb, n),
        lambda g: pi.project(g.reshape((nb,) + op.input_shape)).reshape(nb, n),
        op="P_A",
    )
    pinv_y = pi.solve(y).reshape(nb, n)
    div_term = _weighted_divergence(f, y, fy, _as_mode(div), lift=lambda b: pi.solve(b).reshape(b.shape[0], n))
    total = T.sum_squares(proj) - T.tsum(T.mul(flat, Tensor(pinv_y))) * 2.0 + div_term * (2.0 * sigma**2)
    return total * (1.0 / (n * nb))


def sure_gsure_offset(y, sigma: float) -> float:
    """``sure - gsure`` when ``A = I``: ``||y||^2 / n - sigma^2`` batch-averaged."""
    y, nb, _ = _batch(y)
    return float(np.sum(y * y)) / (y.shape[1] * nb) - sigma**2
