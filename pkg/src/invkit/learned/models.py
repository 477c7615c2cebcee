"""Reconstruction networks that embed the forward operator.

Batched images are tensors of shape (N, 1, H, W); batched measurements are
(N, m).
"""

from __future__ import annotations

import math

import numpy as np

from ..neuralkit import tensor as T
from ..neuralkit.layers import Network, build_denoiser
from ..neuralkit.tensor import Tensor
from ..operators import ForwardOperator, OperatorError
from ..solvers import cg


def to_batch(images) -> np.ndarray:
    """(H, W) or (N, H, W) arrays to (N, 1, H, W)."""
    a = np.asarray(images, dtype=np.float64)
    if a.ndim == 2:
        return a[None, None]
    if a.ndim == 3:
        return a[:, None]
    if a.ndim == 4:
        return a
    raise ValueError(f"cannot batch array of shape {a.shape}")


def forward_op(op: ForwardOperator, x: Tensor) -> Tensor:
    """``A(x)`` on an (N, 1, H, W) tensor; backward uses the Jacobian transpose."""
    n = x.shape[0]

    def fwd(xd):
        return op.apply(xd.reshape((n,) + op.input_shape))

    def vjp(xd, g):
        return op.jtvp(xd.reshape((n,) + op.input_shape), g).reshape(xd.shape)

    return T.custom(x, fwd, vjp, op=f"A[{op.kind}]")


def adjoint_op(op: ForwardOperator, u: Tensor) -> Tensor:
    """``A^T u`` on an (N, m) tensor, returning (N, 1, H, W)."""
    n = u.shape[0]
    shape = (n, 1) + op.input_shape
    return T.linear_map(
        u,
        lambda ud: op.adjoint(ud).reshape(shape),
        lambda g: op.apply(g.reshape((n,) + op.input_shape)),
        op=f"AT[{op.kind}]",
    )


class ApproxInverse:
    """A fixed linear map from measurements back to images.

    ``kind`` is ``"adjoint"``, ``"pinv"`` or ``"identity"`` (requires m == n).
    ``pinv`` solves ``(A^T A + damping I) x = A^T y`` by CG from zero to a
    tight tolerance; with ``damping = 0`` that is the minimum-norm
    least-squares solution. CG is run to convergence on purpose: a truncated
    CG is not a linear function of ``y``.
    """

    def __init__(self, op: ForwardOperator, kind="adjoint", damping=0.0, cg_iters=2000, cg_tol=1e-10):
        if kind not in ("adjoint", "pinv", "identity"):
            raise ValueError(f"unknown approximate inverse {kind!r}")
        if kind != "identity" and not op.linear:
            raise OperatorError("approximate inverse needs a linear operator")
        if kind == "identity" and op.output_size != op.n:
            raise OperatorError("identity approximate inverse needs m == n")
        if not damping >= 0:
            raise ValueError("damping must be nonnegative")
        self.op, self.kind, self.damping = op, kind, float(damping)
        self.cg_iters, self.cg_tol = cg_iters, cg_tol

    @classmethod
    def from_spec(cls, op: ForwardOperator, text: str) -> "ApproxInverse":
        """``"adjoint"``, ``"identity"``, ``"pinv"`` or ``"pinv:<damping>"``."""
        kind, _, arg = text.partition(":")
        if arg and kind != "pinv":
            raise ValueError(f"malformed approximate inverse {text!r}")
        try:
            damping = float(arg) if arg else 0.0
        except ValueError as exc:
            raise ValueError(f"malformed approximate inverse {text!r}") from exc
        return cls(op, kind, damping)

    def __str__(self):
        if self.kind == "pinv" and self.damping:
            return f"pinv:{self.damping!r}"
        return self.kind

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.op.output_size:
            raise OperatorError(f"measurement length {y.shape[-1]} != {self.op.output_size}")
        if self.kind == "identity":
            return y.reshape(y.shape[:-1] + self.op.input_shape).copy()
        if self.kind == "adjoint":
            return self.op.adjoint(y)
        flat = y.reshape(-1, y.shape[-1])
        out = np.stack([self._pinv1(v) for v in flat])
        return out.reshape(y.shape[:-1] + self.op.input_shape)

    def _pinv1(self, y):
        d = self.damping
        x, _, _ = cg(lambda v: self.op.normal(v) + d * v, self.op.adjoint(y), tol=self.cg_tol, max_iters=self.cg_iters)
        return x


BLUR_DAMPING = 0.01


def default_approx_inverse(op: ForwardOperator) -> ApproxInverse:
    """Adjoint for compressive, MRI and Radon; pseudoinverse for the blur and mask kinds.

    Blurs get a small damping term: their transfer function nearly vanishes
    at high frequencies and the undamped pseudoinverse amplifies noise there.
    """
    if op.kind in ("convolution", "superresolution"):
        return ApproxInverse(op, "pinv", damping=BLUR_DAMPING)
    if op.kind == "subsample":
        return ApproxInverse(op, "pinv")
    if op.kind == "identity":
        return ApproxInverse(op, "identity")
    return ApproxInverse(op, "adjoint")


class ResidualModel:
    """``f(y) = g(Ainv y) + Ainv y`` with a trainable image-to-image network ``g``."""

    def __init__(self, g: Network, approx_inverse: ApproxInverse):
        self.g = g
        self.approx_inverse = approx_inverse

    def parameters(self):
        return self.g.parameters()

    def manifest(self):
        return [f"# residual approx_inverse={self.approx_inverse}"] + self.g.manifest()

    def __call__(self, y) -> Tensor:
        y = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
        base = Tensor(to_batch(self.approx_inverse(y.reshape(-1, y.shape[-1]))))
        return T.add(self.g(base), base)


def residual_reconstruct(g: Network, approx_inverse: ApproxInverse, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    out = ResidualModel(g, approx_inverse)(y.reshape(-1, y.shape[-1])).data
    return out.reshape(y.shape[:-1] + approx_inverse.op.input_shape)


class UnrolledModel:
    """K blocks of ``x <- P(x - eta A^T (A x - y))`` from ``x = 0``.

    The step size is stored as ``log(eta)`` so it stays positive under
    training. The same prox network is shared by every block.
    """

    def __init__(self, op: ForwardOperator, prox: Network, n_blocks=5, eta=1.0, learn_eta=True):
        if n_blocks < 1:
            raise ValueError("unrolled model needs at least one block")
        if not eta > 0:
            raise ValueError("eta must be positive")
        if not op.linear:
            raise OperatorError("unrolled model needs a linear operator")
        self.op = op
        self.prox = prox
        self.n_blocks = int(n_blocks)
        self.log_eta = Tensor(np.array(math.log(eta)), requires_grad=learn_eta)
        self.learn_eta = learn_eta

    @property
    def eta(self) -> float:
        return float(np.exp(self.log_eta.data))

    def parameters(self):
        params = list(self.prox.parameters())
        if self.learn_eta:
            params.append(self.log_eta)
        return params

    def manifest(self):
        return [f"# unrolled blocks={self.n_blocks} op={self.op.kind} learn_eta={int(self.learn_eta)}"] + self.prox.manifest()

    def with_operator(self, op: ForwardOperator) -> "UnrolledModel":
        """Same trained weights bound to a different (e.g. perturbed) operator."""
        clone = UnrolledModel.__new__(UnrolledModel)
        clone.__dict__.update(self.__dict__)
        clone.op = op
        return clone

    def __call__(self, y) -> Tensor:
        y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float64).reshape(-1, self.op.output_size))
        eta = T.exp(self.log_eta)
        x = Tensor(np.zeros((y.shape[0], 1) + self.op.input_shape))
        for _ in range(self.n_blocks):
            r = forward_op(self.op, x) - y
            x = x - adjoint_op(self.op, r) * eta
            x = self.prox(x)
            if not np.all(np.isfinite(x.data)):
                raise FloatingPointError("non-finite activation in unrolled block")
        return x


def unrolled_forward(model: UnrolledModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    out = model(y.reshape(-1, model.op.output_size)).data
    return out.reshape(y.shape[:-1] + model.op.input_shape)


def default_unrolled(op, n_blocks=5, channels=16, depth=3, seed=0, eta=None, norm_seed=0):
    """Unrolled model with a zero-initialized residual prox (starts as plain gradient descent)."""
    from ..operators import estimate_norm_sq

    if eta is None:
        eta = 0.9 / max(estimate_norm_sq(op, 50, norm_seed), 1e-12)
    prox = build_denoiser(channels, depth, seed, residual=True, zero_last=True)
    return UnrolledModel(op, prox, n_blocks, eta)
