"""Model-based reconstruction: least squares, proximal gradient, ADMM, PnP, RED
and gradient descent for phase retrieval.

Every solver starts from ``x = 0`` (phase retrieval excepted), leaves its
inputs untouched and returns a :class:`SolveReport`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .operators import ForwardOperator, OperatorError, estimate_norm_sq
from .regularizers import Regularizer, prox, value

Denoiser = Callable[[np.ndarray], np.ndarray]


class DivergenceError(FloatingPointError):
    """An iterate or objective became non-finite."""


@dataclass
class SolveConfig:
    step_size: float | None = None  # None: 0.9 / ||A||^2
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.tol >= 0:
            raise ValueError("tol must be nonnegative")


@dataclass
class SolveReport:
    reconstruction: np.ndarray
    objective_trace: np.ndarray
    iterations_run: int
    converged: bool
    notes: dict = field(default_factory=dict)


def _finite(x, what="iterate"):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite {what}")
    return x


def _linear(op):
    if not op.linear:
        raise OperatorError(f"solver needs a linear operator, got {op.kind}")


def _y(op, y):
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if y.shape != (op.output_size,):
        raise OperatorError(f"measurement shape {y.shape} does not match operator output ({op.output_size},)")
    return _finite(y, "measurement")


class _Stopper:
    """Relative objective change below ``tol`` on 3 consecutive iterations."""

    def __init__(self, tol, patience=3):
        self.tol = tol
        self.patience = patience
        self.count = 0
        self.prev = None

    def __call__(self, obj):
        if self.prev is not None:
            change = abs(self.prev - obj) / max(abs(self.prev), 1e-300)
            self.count = self.count + 1 if change < self.tol else 0
        self.prev = obj
        return self.count >= self.patience


def cg(apply_m, b, x0=None, tol=1e-10, max_iters=1000):
    """Conjugate gradients for a symmetric positive semidefinite map.

    Stops when ``||b - M x|| <= tol * ||b||``. Returns ``(x, iters, residual_norm)``.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_m(x) if x0 is not None else b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r))
    bnorm = float(np.linalg.norm(b))
    target = tol * bnorm
    it = 0
    while it < max_iters and np.sqrt(rs) > target:
        mp = apply_m(p)
        denom = float(np.vdot(p, mp))
        if denom <= 0:
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * mp
        rs_new = float(np.vdot(r, r))
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
        _finite(x)
    return x, it, float(np.sqrt(rs))


def default_step(op: ForwardOperator, cfg: SolveConfig) -> float:
    if cfg.step_size is not None:
        return cfg.step_size
    return 0.9 / max(estimate_norm_sq(op, 50, cfg.seed), 1e-12)


def ml_least_squares(op: ForwardOperator, y, lam: float, cfg: SolveConfig | None = None) -> SolveReport:
    """Solve ``(A^T A + lam I) x = A^T y`` by CG from zero."""
    cfg = cfg or SolveConfig(max_iters=1000, tol=1e-10)
    _linear(op)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    y = _y(op, y)
    aty = op.adjoint(y)

    def normal(v):
        return op.normal(v) + lam * v

    x, iters, res = cg(normal, aty, tol=cfg.tol, max_iters=cfg.max_iters)
    r = op.apply(x) - y
    obj = 0.5 * float(r @ r) + 0.5 * lam * float(np.sum(x * x))
    bnorm = float(np.linalg.norm(aty))
    return SolveReport(
        x,
        np.array([obj]),
        iters,
        res <= cfg.tol * bnorm,
        {"normal_residual": res, "rhs_norm": bnorm},
    )


def _map_objective(op, y, reg, x):
    r = op.apply(x) - y
    return 0.5 * float(r @ r) + value(reg, x)


def prox_gradient(op: ForwardOperator, y, reg: Regularizer, cfg: SolveConfig | None = None) -> SolveReport:
    """``x <- prox_{eta r}(x - eta A^T (A x - y))`` from ``x = 0``."""
    cfg = cfg or SolveConfig()
    _linear(op)
    y = _y(op, y)
    eta = default_step(op, cfg)
    x = np.zeros(op.input_shape)
    stop = _Stopper(cfg.tol)
    trace = []
    converged = False
    for _ in range(cfg.max_iters):
        x = prox(reg, x - eta * op.adjoint(op.apply(x) - y), eta)
        _finite(x)
        obj = _map_objective(op, y, reg, x)
        trace.append(obj)
        if stop(obj):
            converged = True
            break
    return SolveReport(x, np.array(trace), len(trace), converged, {"eta": eta})


def _admm(op, y, prox_step, rho, cfg, objective):
    if not rho > 0:
        raise ValueError("rho must be positive")
    aty = op.adjoint(y)
    v = np.zeros(op.input_shape)
    u = np.zeros(op.input_shape)
    x = np.zeros(op.input_shape)

    def normal(w):
        return op.normal(w) + rho * w

    stop = _Stopper(cfg.tol)
    trace = []
    converged = False
    for _ in range(cfg.max_iters):
        x, _, _ = cg(normal, aty + rho * (v - u), x0=x, tol=1e-12, max_iters=500)
        v = _finite(prox_step(x + u), "denoiser output")
        u = u + x - v
        obj = objective(v)
        trace.append(obj)
        primal = float(np.linalg.norm(x - v)) <= max(cfg.tol, 1e-15) * max(float(np.linalg.norm(v)), 1.0)
        if stop(obj) and primal:
            converged = True
            break
    return v, np.array(trace), len(trace), converged


def admm(op: ForwardOperator, y, reg: Regularizer, rho: float = 1.0, cfg: SolveConfig | None = None) -> SolveReport:
    """Two-block ADMM splitting ``x = v`` between the data term and ``reg``."""
    cfg = cfg or SolveConfig()
    _linear(op)
    y = _y(op, y)
    v, trace, iters, conv = _admm(
        op, y, lambda z: prox(reg, z, 1.0 / rho), rho, cfg, lambda v: _map_objective(op, y, reg, v)
    )
    return SolveReport(v, trace, iters, conv, {"rho": rho})


def pnp_admm(op: ForwardOperator, y, denoiser: Denoiser, rho: float = 1.0, cfg: SolveConfig | None = None) -> SolveReport:
    """ADMM with the proximal step replaced by ``denoiser``.

    The trace holds the measurement residual ``||A v - y||``; no convergence
    guarantee is implied.
    """
    cfg = cfg or SolveConfig()
    _linear(op)
    y = _y(op, y)

    def residual(v):
        return float(np.linalg.norm(op.apply(v) - y))

    v, trace, iters, conv = _admm(op, y, denoiser, rho, cfg, residual)
    return SolveReport(v, trace, iters, conv, {"rho": rho, "trace": "measurement residual"})


def red_solve(op: ForwardOperator, y, denoiser: Denoiser, lam: float, cfg: SolveConfig | None = None) -> SolveReport:
    """Gradient descent on ``0.5 ||Ax - y||^2 + (lam/2) x^T (x - D(x))``.

    Uses the gradient ``A^T (Ax - y) + lam (x - D(x))``, which is exact only
    when the denoiser Jacobian is symmetric. Stops when the gradient norm
    falls below ``tol * ||A^T y||``.
    """
    cfg = cfg or SolveConfig()
    _linear(op)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    y = _y(op, y)
    if cfg.step_size is None:
        eta = 0.9 / (estimate_norm_sq(op, 50, cfg.seed) + lam)
    else:
        eta = cfg.step_size
    aty_norm = float(np.linalg.norm(op.adjoint(y)))
    x = np.zeros(op.input_shape)
    trace = []
    converged = False
    grad_norm = np.inf
    for _ in range(cfg.max_iters):
        d = _finite(np.asarray(denoiser(x), dtype=np.float64), "denoiser output")
        g = op.adjoint(op.apply(x) - y) + lam * (x - d)
        grad_norm = float(np.linalg.norm(g))
        if grad_norm <= cfg.tol * aty_norm:
            converged = True
            break
        x = _finite(x - eta * g)
        r = op.apply(x) - y
        trace.append(0.5 * float(r @ r) + 0.5 * lam * float(np.sum(x * (x - denoiser(x)))))
    return SolveReport(
        x,
        np.array(trace),
        len(trace),
        converged,
        {"eta": eta, "gradient": "symmetric-jacobian RED gradient", "grad_norm": grad_norm},
    )


def phase_objective(op, y, x):
    r = op.apply(x) - y
    return 0.5 * float(r @ r)


def phase_retrieval_gd(op: ForwardOperator, y, restarts: int = 4, cfg: SolveConfig | None = None) -> SolveReport:
    """Gradient descent on ``0.5 ||y - |Ax|^2||^2`` with backtracking steps.

    Initializations are nonnegative random images scaled to the measurement
    energy, one per restart, seeded from ``cfg.seed``. The zero image (a
    stationary point) is always a candidate. Returns the candidate with the
    lowest final objective; the reconstruction is determined up to sign.
    """
    cfg = cfg or SolveConfig(max_iters=500, tol=1e-12)
    if op.kind != "phase_retrieval":
        raise OperatorError("phase_retrieval_gd needs a phase_retrieval operator")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    y = _y(op, y)
    rng = np.random.default_rng(cfg.seed)
    lnorm = max(estimate_norm_sq(op.inner, 50, cfg.seed), 1e-12)
    scale = np.sqrt(max(float(np.mean(np.abs(y))), 1e-12) / lnorm)

    zero = np.zeros(op.input_shape)
    best_x, best_obj, best_trace, best_iters = zero, phase_objective(op, y, zero), np.array([]), 0
    init_objs = []
    run_objs = []
    n_failed = 0
    for _ in range(restarts):
        x = np.abs(rng.standard_normal(op.input_shape)) * scale
        init_objs.append(phase_objective(op, y, x))
        try:
            x, trace = _phase_descent(op, y, x, cfg)
        except DivergenceError:
            n_failed += 1
            run_objs.append(np.inf)
            continue
        obj = trace[-1] if len(trace) else phase_objective(op, y, x)
        run_objs.append(obj)
        if obj < best_obj:
            best_x, best_obj, best_trace, best_iters = x, obj, trace, len(trace)
    if n_failed == restarts:
        raise DivergenceError("all phase retrieval restarts diverged")
    return SolveReport(
        best_x,
        np.asarray(best_trace),
        best_iters,
        best_obj <= cfg.tol * max(0.5 * float(y @ y), 1e-300) or best_obj == 0.0,
        {"initial_objectives": init_objs, "final_objectives": run_objs, "sign_ambiguous": True},
    )


def _phase_descent(op, y, x, cfg):
    trace = []
    step = 1.0
    obj = phase_objective(op, y, x)
    stop = _Stopper(cfg.tol)
    for _ in range(cfg.max_iters):
        r = op.apply(x) - y
        g = op.jtvp(x, r)
        gg = float(np.sum(g * g))
        if gg == 0.0:
            break
        # Armijo backtracking; the step is allowed to grow again afterwards
        step *= 2.0
        while True:
            cand = x - step * g
            cobj = phase_objective(op, y, cand)
            if np.isfinite(cobj) and cobj <= obj - 0.5 * step * gg:
                break
            step *= 0.5
            if step < 1e-30:
                return x, np.array(trace)
        x, obj = _finite(cand), cobj
        trace.append(obj)
        if stop(obj) or obj == 0.0:
            break
    return x, np.array(trace)
