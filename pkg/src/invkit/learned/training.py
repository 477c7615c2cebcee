"""Training loops for the supervised, Noise2Noise and SURE/GSURE regimes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..neuralkit import tensor as T
from ..neuralkit.optim import Optimizer
from ..neuralkit.tensor import Tensor
from .models import to_batch
from .risk import DivergenceMode, Pseudoinverse, gsure_loss, sure_loss

REGIMES = ("paired_xy", "x_only", "y_only_sure", "y_only_gsure", "noise2noise")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingRegime:
    """What the training set contains.

    ``inputs`` are measurements (N, m) or, for ``x_only``, images. ``targets``
    are clean images for ``paired_xy`` and noisy images for ``noise2noise``.
    """

    kind: str
    inputs: np.ndarray | None = None
    targets: np.ndarray | None = None
    sigma: float | None = None
    dataset_id: str = ""
    loss: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in REGIMES:
            raise ValueError(f"unknown training regime {self.kind!r}")

    def validate(self):
        if self.inputs is None or len(self.inputs) == 0:
            raise TrainingError(f"{self.kind} regime has an empty dataset")
        if self.kind in ("paired_xy", "noise2noise"):
            if self.targets is None or len(self.targets) != len(self.inputs):
                what = "(x, y) pairs" if self.kind == "paired_xy" else "(noisy x, y) pairs"
                raise TrainingError(f"{self.kind} regime requires {what}")
        if self.kind.startswith("y_only") and not (self.sigma is not None and self.sigma > 0):
            raise TrainingError(f"{self.kind} regime requires measurements and a noise level sigma > 0")
        return self


@dataclass
class TrainResult:
    model: object
    loss_trace: list[float]


def _fit(model, inputs, loss_fn, optim: Optimizer, epochs, seed, batch_size):
    """Shared minibatch loop. ``loss_fn(model, idx) -> scalar Tensor``."""
    n = len(inputs)
    if n == 0:
        raise TrainingError("empty dataset")
    rng = np.random.default_rng(seed)
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            try:
                loss = loss_fn(model, idx)
            except FloatingPointError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, batch starting {start}") from exc
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            optim.zero_grad()
            loss.backward()
            optim.step()
            total += value * len(idx)
            count += len(idx)
        trace.append(total / count)
    return trace


def train_supervised(model, regime: TrainingRegime, optim: Optimizer, epochs=10, seed=0, batch_size=8) -> TrainResult:
    """Minimize mean squared error between ``model(y)`` and the targets."""
    if regime.kind not in ("paired_xy", "noise2noise"):
        raise TrainingError(f"supervised training needs paired data, got {regime.kind}")
    regime.validate()
    ys = np.asarray(regime.inputs, dtype=np.float64)
    xs = to_batch(regime.targets)

    def loss_fn(m, idx):
        return T.mse(m(Tensor(ys[idx])), xs[idx])

    return TrainResult(model, _fit(model, ys, loss_fn, optim, epochs, seed, batch_size))


def train_noise2noise(model, regime: TrainingRegime, optim: Optimizer, epochs=10, seed=0, batch_size=8) -> TrainResult:
    """Supervised loop against noisy targets whose conditional mean is the clean image."""
    if regime.kind != "noise2noise":
        raise TrainingError(f"noise2noise training needs a noise2noise regime, got {regime.kind}")
    return train_supervised(model, regime, optim, epochs, seed, batch_size)


def train_sure(model, regime: TrainingRegime, optim: Optimizer, epochs=10, seed=0, batch_size=8, div="mc:1:1e-3", op=None) -> TrainResult:
    """Self-supervised training on measurements only.

    ``y_only_sure`` uses SURE (denoising, ``model`` maps y to an image of the
    same size); ``y_only_gsure`` uses GSURE with the linear operator ``op``.
    Monte Carlo probes are reseeded per batch from ``seed``.
    """
    regime.validate()
    if regime.kind not in ("y_only_sure", "y_only_gsure"):
        raise TrainingError(f"SURE training needs a y_only regime, got {regime.kind}")
    mode = div if isinstance(div, DivergenceMode) else DivergenceMode.parse(div)
    ys = np.asarray(regime.inputs, dtype=np.float64)
    sigma = float(regime.sigma)
    probe_rng = np.random.default_rng([seed, 1])
    pinv = None
    if regime.kind == "y_only_gsure":
        if op is None:
            raise TrainingError("GSURE training needs the forward operator")
        pinv = Pseudoinverse(op)

    def loss_fn(m, idx):
        bmode = DivergenceMode(mode.kind, mode.probes, mode.eps, int(probe_rng.integers(2**63)))
        if pinv is None:
            return sure_loss(m, ys[idx], sigma, bmode)
        return gsure_loss(m, ys[idx], sigma, op, bmode, pinv)

    return TrainResult(model, _fit(model, ys, loss_fn, optim, epochs, seed, batch_size))
