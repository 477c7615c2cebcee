"""Test-time forward model perturbations."""

from __future__ import annotations

import copy

import numpy as np

from ..operators import Compressive, Convolution, ForwardOperator, MRI, OperatorError, Subsample, SuperResolution

PERTURBATIONS = ("kernel_jitter", "mask_swap", "matrix_noise")


def parse_perturbation(text):
    """``"kernel_jitter:0.2"`` -> ``("kernel_jitter", 0.2)``."""
    kind, _, amount = str(text).partition(":")
    if kind not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {kind!r}")
    try:
        return kind, float(amount) if amount else 0.0
    except ValueError as exc:
        raise ValueError(f"malformed perturbation {text!r}") from exc


def _jitter(kernel, eps, rng):
    total = kernel.sum()
    jittered = kernel * (1.0 + eps * rng.standard_normal(kernel.shape))
    s = jittered.sum()
    if s == 0 or total == 0:
        raise OperatorError("kernel sums to zero; cannot renormalize")
    return jittered * (total / s)


def _swap(mask, fraction, rng):
    mask = mask.copy()
    on = np.flatnonzero(mask)
    off = np.flatnonzero(~mask)
    k = min(int(round(fraction * on.size)), off.size, on.size - 1)
    if k > 0:
        flat = mask.reshape(-1)
        flat[rng.choice(on, k, replace=False)] = False
        flat[rng.choice(off, k, replace=False)] = True
    return mask


def perturb_operator(op: ForwardOperator, kind, amount, seed=0) -> ForwardOperator:
    """New operator with the named perturbation applied.

    ``kernel_jitter`` multiplies each blur tap by ``1 + amount * g`` and
    rescales so the kernel keeps its sum. ``mask_swap`` moves a fraction of
    the sampled locations to unsampled ones. ``matrix_noise`` adds Gaussian
    entries of standard deviation ``amount / sqrt(m)``. A zero amount
    returns an unperturbed copy.
    """
    if kind not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {kind!r}")
    if amount < 0:
        raise ValueError("perturbation amount must be nonnegative")
    applicable = {
        "kernel_jitter": (Convolution, SuperResolution),
        "mask_swap": (Subsample, MRI),
        "matrix_noise": (Compressive,),
    }[kind]
    if not isinstance(op, applicable):
        raise OperatorError(f"{kind} does not apply to a {op.kind} operator")
    if amount == 0:
        return copy.deepcopy(op)
    rng = np.random.default_rng(seed)
    if isinstance(op, Convolution):
        return Convolution(_jitter(op.kernel, amount, rng), op.input_shape)
    if isinstance(op, SuperResolution):
        return SuperResolution(_jitter(op.blur_op.kernel, amount, rng), op.factor, op.input_shape)
    if isinstance(op, Subsample):
        return Subsample(_swap(op.mask, amount, rng))
    if isinstance(op, MRI):
        return MRI(_swap(op.mask, amount, rng), op.sensitivity)
    noise = rng.standard_normal(op.matrix.shape) * (amount / np.sqrt(op.output_size))
    return Compressive(op.output_size, op.input_shape, op.seed, op.ensemble, op.matrix + noise)
