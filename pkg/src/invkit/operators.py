"""Forward measurement models and measurement noise.

Images are float64 arrays of shape ``(h, w)``; every operator also accepts a
stack of images ``(..., h, w)`` and returns measurements of shape ``(..., m)``.
Complex-valued measurements (MRI) are returned as the concatenation of their
real and imaginary parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kernels


class OperatorError(ValueError):
    """Raised for malformed operator specifications or mismatched dimensions."""


def as_image(x, shape=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and shape is not None and shape[0] == 1:
        x = x[None, :]
    if x.ndim < 2:
        raise OperatorError(f"image must be at least 2-D, got shape {x.shape}")
    if shape is not None and x.shape[-2:] != tuple(shape):
        raise OperatorError(f"image shape {x.shape[-2:]} does not match operator input {tuple(shape)}")
    if not np.all(np.isfinite(x)):
        raise OperatorError("image contains non-finite values")
    return x


@dataclass
class Measurement:
    """A measurement vector tagged with the operator and noise level that produced it."""

    data: np.ndarray
    operator: str = ""
    sigma: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise OperatorError("measurement contains non-finite values")


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise OperatorError(f"noise sigma must be nonnegative, got {self.sigma}")


def add_noise(y, noise: NoiseModel):
    """Return ``y + sigma * g`` with ``g`` standard normal drawn from ``noise.seed``."""
    if isinstance(y, Measurement):
        return Measurement(add_noise(y.data, noise), y.operator, noise.sigma)
    if noise.sigma < 0:
        raise OperatorError(f"noise sigma must be nonnegative, got {noise.sigma}")
    y = np.asarray(y, dtype=np.float64)
    if noise.sigma == 0:
        return y.copy()
    rng = np.random.default_rng(noise.seed)
    return y + noise.sigma * rng.standard_normal(y.shape)


class ForwardOperator:
    """Base class. Subclasses set ``kind``, ``input_shape`` and ``output_size``."""

    kind = "abstract"
    linear = True

    input_shape: tuple[int, int]
    output_size: int

    @property
    def n(self) -> int:
        return self.input_shape[0] * self.input_shape[1]

    @property
    def m(self) -> int:
        return self.output_size

    def _check_in(self, x):
        return as_image(x, self.input_shape)

    def _check_out(self, u):
        u = np.asarray(u.data if isinstance(u, Measurement) else u, dtype=np.float64)
        if u.ndim < 1 or u.shape[-1] != self.output_size:
            raise OperatorError(f"measurement length {u.shape[-1:]} does not match operator output {self.output_size}")
        return u

    def apply(self, x) -> np.ndarray:
        return self._apply(self._check_in(x))

    def adjoint(self, u) -> np.ndarray:
        if not self.linear:
            raise OperatorError(f"{self.kind} operator is nonlinear and has no adjoint")
        return self._adjoint(self._check_out(u))

    def jtvp(self, x, u) -> np.ndarray:
        """Jacobian-transpose-vector product at ``x``; equals the adjoint for linear kinds."""
        self._check_in(x)
        return self._adjoint(self._check_out(u))

    def normal(self, x) -> np.ndarray:
        return self._adjoint(self._apply(x))

    def to_spec(self) -> dict[str, Any]:
        return {"kind": self.kind, "shape": list(self.input_shape)}

    def __repr__(self):
        return f"<{type(self).__name__} {self.input_shape} -> {self.output_size}>"

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, u):
        raise NotImplementedError


class Identity(ForwardOperator):
    kind = "identity"

    def __init__(self, shape):
        self.input_shape = _shape2(shape)
        self.output_size = self.n

    def _apply(self, x):
        return x.reshape(x.shape[:-2] + (self.n,)).copy()

    def _adjoint(self, u):
        return u.reshape(u.shape[:-1] + self.input_shape).copy()


def _kernel_transfer(kernel, shape):
    kh, kw = kernel.shape
    h, w = shape
    if kh > h or kw > w:
        raise OperatorError(f"kernel {kernel.shape} larger than image {shape}")
    pad = np.zeros(shape)
    pad[:kh, :kw] = kernel
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


class Convolution(ForwardOperator):
    """Circular convolution with a centered kernel."""

    kind = "convolution"

    def __init__(self, kernel, shape):
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim == 1:
            kernel = kernel[None, :]
        if kernel.ndim != 2 or kernel.size == 0 or not np.all(np.isfinite(kernel)):
            raise OperatorError("convolution kernel must be a finite 1-D or 2-D array")
        self.kernel = kernel
        self.input_shape = _shape2(shape)
        self.output_size = self.n
        self._tf = _kernel_transfer(kernel, self.input_shape)

    def blur(self, x):
        return np.fft.ifft2(np.fft.fft2(x) * self._tf).real

    def blur_t(self, x):
        return np.fft.ifft2(np.fft.fft2(x) * np.conj(self._tf)).real

    def _apply(self, x):
        return self.blur(x).reshape(x.shape[:-2] + (self.n,))

    def _adjoint(self, u):
        return self.blur_t(u.reshape(u.shape[:-1] + self.input_shape))

    def to_spec(self):
        return {"kind": self.kind, "shape": list(self.input_shape), "kernel": self.kernel.tolist()}


class Subsample(ForwardOperator):
    """Keeps the pixels where ``mask`` is 1 (inpainting)."""

    kind = "subsample"

    def __init__(self, mask):
        mask = np.asarray(mask)
        if mask.ndim == 1:
            mask = mask[None, :]
        if not np.all((mask == 0) | (mask == 1)):
            raise OperatorError("mask entries must be 0 or 1")
        mask = mask.astype(bool)
        if not mask.any():
            raise OperatorError("mask selects zero pixels")
        self.mask = mask
        self.input_shape = mask.shape
        self.output_size = int(mask.sum())

    def _apply(self, x):
        return x[..., self.mask]

    def _adjoint(self, u):
        out = np.zeros(u.shape[:-1] + self.input_shape)
        out[..., self.mask] = u
        return out

    def to_spec(self):
        return {"kind": self.kind, "shape": list(self.input_shape), "mask": self.mask.astype(int).tolist()}


class SuperResolution(ForwardOperator):
    """Blur followed by keeping every ``factor``-th row and column."""

    kind = "superresolution"

    def __init__(self, kernel, factor, shape):
        if int(factor) < 1:
            raise OperatorError("decimation factor must be >= 1")
        self.factor = int(factor)
        self.blur_op = Convolution(kernel, shape)
        self.input_shape = self.blur_op.input_shape
        h, w = self.input_shape
        self.low_shape = (-(-h // self.factor), -(-w // self.factor))
        self.output_size = self.low_shape[0] * self.low_shape[1]

    def _apply(self, x):
        f = self.factor
        low = self.blur_op.blur(x)[..., ::f, ::f]
        return low.reshape(x.shape[:-2] + (self.output_size,))

    def _adjoint(self, u):
        f = self.factor
        up = np.zeros(u.shape[:-1] + self.input_shape)
        up[..., ::f, ::f] = u.reshape(u.shape[:-1] + self.low_shape)
        return self.blur_op.blur_t(up)

    def to_spec(self):
        return {
            "kind": self.kind,
            "shape": list(self.input_shape),
            "kernel": self.blur_op.kernel.tolist(),
            "factor": self.factor,
        }


def compressive_matrix(m, n, seed, ensemble="gaussian"):
    """Seeded sensing matrix with i.i.d. entries of variance 1/m."""
    rng = np.random.default_rng(seed)
    if ensemble == "gaussian":
        return rng.standard_normal((m, n)) / math.sqrt(m)
    if ensemble == "bernoulli":
        return rng.choice(np.array([-1.0, 1.0]), size=(m, n)) / math.sqrt(m)
    raise OperatorError(f"unknown ensemble {ensemble!r}")


class Compressive(ForwardOperator):
    kind = "compressive"

    def __init__(self, m, shape, seed=0, ensemble="gaussian", matrix=None):
        self.input_shape = _shape2(shape)
        self.seed = seed
        self.ensemble = ensemble
        if int(m) < 1:
            raise OperatorError("compressive operator needs m >= 1")
        if matrix is None:
            matrix = compressive_matrix(int(m), self.n, seed, ensemble)
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (int(m), self.n):
            raise OperatorError(f"matrix shape {matrix.shape} != ({m}, {self.n})")
        self.matrix = matrix
        self.output_size = int(m)

    def _apply(self, x):
        return x.reshape(x.shape[:-2] + (self.n,)) @ self.matrix.T

    def _adjoint(self, u):
        return (u @ self.matrix).reshape(u.shape[:-1] + self.input_shape)

    def to_spec(self):
        return {
            "kind": self.kind,
            "shape": list(self.input_shape),
            "m": self.output_size,
            "seed": self.seed,
            "ensemble": self.ensemble,
        }


class MRI(ForwardOperator):
    """Single-coil Cartesian MRI, ``A = S F D``, returned as [real, imag] pairs."""

    kind = "mri"

    def __init__(self, mask, sensitivity=None):
        mask = np.asarray(mask)
        if not np.all((mask == 0) | (mask == 1)):
            raise OperatorError("mask entries must be 0 or 1")
        mask = mask.astype(bool)
        if not mask.any():
            raise OperatorError("mask selects zero pixels")
        self.mask = mask
        self.input_shape = mask.shape
        if sensitivity is None:
            sensitivity = np.ones(mask.shape)
        sensitivity = np.asarray(sensitivity, dtype=np.complex128)
        if sensitivity.shape != mask.shape:
            raise OperatorError("sensitivity map must match the mask shape")
        self.sensitivity = sensitivity
        self.n_samples = int(mask.sum())
        self.output_size = 2 * self.n_samples

    def _apply(self, x):
        k = np.fft.fft2(self.sensitivity * x, norm="ortho")[..., self.mask]
        return np.concatenate([k.real, k.imag], axis=-1)

    def _adjoint(self, u):
        c = u[..., : self.n_samples] + 1j * u[..., self.n_samples :]
        full = np.zeros(u.shape[:-1] + self.input_shape, dtype=np.complex128)
        full[..., self.mask] = c
        return (np.conj(self.sensitivity) * np.fft.ifft2(full, norm="ortho")).real

    def to_spec(self):
        spec = {"kind": self.kind, "shape": list(self.input_shape), "mask": self.mask.astype(int).tolist()}
        if not np.all(self.sensitivity == 1):
            spec["sensitivity_real"] = self.sensitivity.real.tolist()
            spec["sensitivity_imag"] = self.sensitivity.imag.tolist()
        return spec


def default_detectors(shape):
    return int(math.ceil(math.hypot(*shape))) + 1


class Radon(ForwardOperator):
    """Parallel-beam projector, pixel-driven with linear detector interpolation.

    Angles are ``pi * a / n_angles``; detectors have unit spacing centred on
    the image centre. The adjoint is the exact transpose of the same
    discretisation.
    """

    kind = "radon"

    def __init__(self, shape, n_angles, n_detectors=None):
        self.input_shape = _shape2(shape)
        if n_detectors is None:
            n_detectors = default_detectors(self.input_shape)
        if int(n_angles) < 1:
            raise OperatorError("radon needs n_angles >= 1")
        if int(n_detectors) < 1:
            raise OperatorError("radon needs n_detectors >= 1")
        self.n_angles = int(n_angles)
        self.n_detectors = int(n_detectors)
        self.output_size = self.n_angles * self.n_detectors

    def _apply(self, x):
        lead = x.shape[:-2]
        flat = np.ascontiguousarray(x).reshape((-1,) + self.input_shape)
        out = np.stack([kernels.radon_forward(im, self.n_angles, self.n_detectors) for im in flat])
        return out.reshape(lead + (self.output_size,))

    def _adjoint(self, u):
        lead = u.shape[:-1]
        flat = np.ascontiguousarray(u).reshape((-1, self.n_angles, self.n_detectors))
        h, w = self.input_shape
        out = np.stack([kernels.radon_adjoint(s, h, w) for s in flat])
        return out.reshape(lead + self.input_shape)

    def to_spec(self):
        return {
            "kind": self.kind,
            "shape": list(self.input_shape),
            "n_angles": self.n_angles,
            "n_detectors": self.n_detectors,
        }


def radon_forward(x, n_angles, n_detectors):
    """Sinogram of ``x`` flattened angle-major, length ``n_angles * n_detectors``."""
    x = as_image(x)
    return Radon(x.shape[-2:], n_angles, n_detectors).apply(x)


class PhaseRetrieval(ForwardOperator):
    """Elementwise squared magnitude ``(A x)**2`` of a real linear inner operator."""

    kind = "phase_retrieval"
    linear = False

    def __init__(self, inner: ForwardOperator):
        if not inner.linear:
            raise OperatorError("phase retrieval needs a linear inner operator")
        self.inner = inner
        self.input_shape = inner.input_shape
        self.output_size = inner.output_size

    def _apply(self, x):
        ax = self.inner._apply(x)
        return ax * ax

    def jtvp(self, x, u):
        x = self._check_in(x)
        u = self._check_out(u)
        return 2.0 * self.inner._adjoint(u * self.inner._apply(x))

    def normal(self, x):
        raise OperatorError("phase retrieval operator is nonlinear")

    def to_spec(self):
        return {"kind": self.kind, "shape": list(self.input_shape), "inner": self.inner.to_spec()}


def _shape2(shape):
    if isinstance(shape, (int, np.integer)):
        shape = (1, int(shape))
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2 or min(shape) < 1:
        raise OperatorError(f"image shape must be two positive integers, got {shape}")
    return shape


def named_kernel(name: str) -> np.ndarray:
    """Parse ``'gaussian:<sigma>:<size>'``, ``'box:<size>'`` or ``'motion:<length>'``."""
    parts = name.split(":")
    try:
        if parts[0] == "gaussian":
            sigma = float(parts[1])
            size = int(parts[2]) if len(parts) > 2 else 2 * int(math.ceil(2 * sigma)) + 1
            r = np.arange(size) - (size - 1) / 2
            g = np.exp(-0.5 * (r / sigma) ** 2)
            k = np.outer(g, g)
        elif parts[0] == "box":
            size = int(parts[1])
            k = np.ones((size, size))
        elif parts[0] == "motion":
            k = np.ones((1, int(parts[1])))
        else:
            raise OperatorError(f"unknown kernel name {name!r}")
    except (IndexError, ValueError) as exc:
        raise OperatorError(f"malformed kernel spec {name!r}") from exc
    return k / k.sum()


def random_mask(shape, fraction, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random(shape) < fraction
    if not mask.any():
        mask.flat[0] = True
    return mask.astype(int)


def _kernel_from_spec(value):
    if isinstance(value, str):
        return named_kernel(value)
    return np.asarray(value, dtype=np.float64)


def _mask_from_spec(spec, shape):
    value = spec["mask"]
    if isinstance(value, str):
        # "random:<fraction>:<seed>"
        parts = value.split(":")
        if parts[0] != "random" or len(parts) != 3:
            raise OperatorError(f"malformed mask spec {value!r}")
        if shape is None:
            raise OperatorError("random mask needs a shape")
        return random_mask(shape, float(parts[1]), int(parts[2]))
    return np.asarray(value)


def make_operator(spec: dict[str, Any]) -> ForwardOperator:
    """Build an operator from a plain dictionary such as ``{"kind": "identity", "n": 4}``.

    Shapes come from ``shape`` (``[h, w]``) or ``n`` (treated as ``[1, n]``).
    """
    spec = dict(spec)
    try:
        kind = spec.pop("kind")
    except KeyError as exc:
        raise OperatorError("operator spec has no 'kind'") from exc
    shape = spec.pop("shape", None)
    if shape is None and "n" in spec:
        shape = (1, int(spec.pop("n")))
    else:
        spec.pop("n", None)
    shape = None if shape is None else _shape2(shape)

    def need_shape():
        if shape is None:
            raise OperatorError(f"{kind} operator needs a shape")
        return shape

    if kind == "identity":
        return Identity(need_shape())
    if kind == "convolution":
        return Convolution(_kernel_from_spec(spec["kernel"]), need_shape())
    if kind == "subsample":
        mask = _mask_from_spec(spec, shape)
        if mask.ndim == 1:
            mask = mask[None, :]
        if shape is not None and mask.shape != shape:
            raise OperatorError(f"mask shape {mask.shape} does not match {shape}")
        return Subsample(mask)
    if kind == "superresolution":
        return SuperResolution(_kernel_from_spec(spec["kernel"]), spec.get("factor", 2), need_shape())
    if kind == "compressive":
        return Compressive(int(spec["m"]), need_shape(), int(spec.get("seed", 0)), spec.get("ensemble", "gaussian"))
    if kind == "mri":
        mask = _mask_from_spec(spec, shape)
        if shape is not None and mask.shape != shape:
            raise OperatorError(f"mask shape {mask.shape} does not match {shape}")
        sens = None
        if "sensitivity_real" in spec:
            sens = np.asarray(spec["sensitivity_real"]) + 1j * np.asarray(spec.get("sensitivity_imag", 0.0))
        return MRI(mask, sens)
    if kind == "radon":
        return Radon(need_shape(), int(spec.get("n_angles", 1)), spec.get("n_detectors"))
    if kind == "phase_retrieval":
        inner = dict(spec.get("inner", {"kind": "identity"}))
        if shape is not None:
            inner.setdefault("shape", list(shape))
        return PhaseRetrieval(make_operator(inner))
    raise OperatorError(f"unknown operator kind {kind!r}")


def estimate_norm_sq(op: ForwardOperator, iters: int = 50, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``A^T A``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.input_shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = op.normal(v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


@dataclass
class OperatorBundle:
    """An operator plus the noise model used to simulate its measurements."""

    op: ForwardOperator
    noise: NoiseModel = field(default_factory=NoiseModel)

    def simulate(self, x) -> Measurement:
        y = add_noise(self.op.apply(x), self.noise)
        return Measurement(y, self.op.kind, self.noise.sigma)
