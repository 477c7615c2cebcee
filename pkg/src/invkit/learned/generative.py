"""Generative priors: a decoder trained as part of an autoencoder, and latent-space
recovery ``z = argmin ||A G(z) - y||^2`` with random restarts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..neuralkit import tensor as T
from ..neuralkit.layers import Dense, Network, ReLU, Reshape, build_decoder
from ..neuralkit.optim import Adam, SGD
from ..neuralkit.tensor import Tensor
from ..operators import Compressive, ForwardOperator
from .models import forward_op, to_batch
from .training import TrainingError, _fit


@dataclass
class Generator:
    """``G: R^k -> R^n`` mapping latents (N, k) to images (N, 1, H, W)."""

    k: int
    decoder: Network
    image_shape: tuple[int, int]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.image_shape[0] * self.image_shape[1]
        if self.k > n / 4:
            raise ValueError(f"latent size k={self.k} exceeds n/4 = {n / 4}")

    def __call__(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64).reshape(-1, self.k))
        return self.decoder(z)

    def generate(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        out = self(z.reshape(-1, self.k)).data
        return out.reshape(z.shape[:-1] + self.image_shape)

    def parameters(self):
        return self.decoder.parameters()

    def manifest(self):
        h, w = self.image_shape
        return [f"# generator k={self.k} shape={h}x{w}"] + self.decoder.manifest()


def linear_generator(basis, image_shape, offset=None) -> Generator:
    """``G(z) = B z (+ offset)`` with ``B`` of shape (n, k)."""
    basis = np.asarray(basis, dtype=np.float64)
    n, k = basis.shape
    layer = Dense(k, n, zero=True)
    layer.weight.data = basis.copy()
    if offset is not None:
        layer.bias.data = np.asarray(offset, dtype=np.float64).reshape(n).copy()
    net = Network([layer, Reshape(1, *image_shape)])
    return Generator(k, net, tuple(image_shape), {"kind": "linear"})


def train_generator(images, k, epochs=50, seed=0, stages=2, channels=8, hidden=64, lr=1e-2, batch_size=16, dataset_id=""):
    """Train an encoder/decoder pair on reconstruction loss and keep the decoder.

    This deterministic autoencoder stands in for GAN/VAE training. Returns
    ``(generator, loss_trace)``.
    """
    xs = to_batch(images)
    if len(xs) == 0:
        raise TrainingError("empty dataset")
    h, w = xs.shape[-2:]
    n = h * w
    if k > n / 4:
        raise ValueError(f"latent size k={k} exceeds n/4 = {n / 4}")
    rng = np.random.default_rng(seed)
    encoder = Network([Reshape(n), Dense(n, hidden, rng), ReLU(), Dense(hidden, k, rng)])
    decoder = build_decoder(k, stages, seed + 1, (h, w), channels)

    class _AE:
        def parameters(self):
            return encoder.parameters() + decoder.parameters()

        def __call__(self, x):
            return decoder(encoder(x))

    ae = _AE()
    optim = Adam(ae.parameters(), lr)

    def loss_fn(m, idx):
        return T.mse(m(Tensor(xs[idx])), xs[idx])

    trace = _fit(ae, xs, loss_fn, optim, epochs, seed, batch_size)
    prov = {"kind": "autoencoder", "k": k, "dataset": dataset_id, "seed": seed, "epochs": epochs}
    gen = Generator(k, decoder, (h, w), prov)
    gen.encoder = encoder
    return gen, trace


@dataclass
class CSGMResult:
    z: np.ndarray
    x: np.ndarray
    loss: float
    initial_losses: list[float]
    final_losses: list[float]
    best_restart: int


def csgm_recover(gen: Generator, op: ForwardOperator, y, restarts=3, steps=500, lr=0.05, seed=0, optimizer="adam", z_scale=1.0, tol=0.0) -> CSGMResult:
    """Gradient-based search over the latent space from seeded Gaussian starts.

    Each restart keeps its best iterate, so the returned loss never exceeds
    any restart's initial loss. Per-restart losses are reported so that a
    failed restart stays visible. A restart stops early once its loss is at
    most ``tol * ||y||^2``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    y = np.asarray(getattr(y, "data", y), dtype=np.float64).reshape(1, -1)
    target = Tensor(y)
    stop_at = tol * float(np.sum(y * y))
    rng = np.random.default_rng(seed)

    def loss_of(z):
        x = gen(z)
        return T.sum_squares(forward_op(op, x) - target), x

    best = None
    initial, final = [], []
    for r in range(restarts):
        z = Tensor(z_scale * rng.standard_normal((1, gen.k)), requires_grad=True)
        opt = Adam([z], lr) if optimizer == "adam" else SGD([z], lr)
        run_best = (np.inf, None, None)
        for t in range(steps + 1):
            loss, x = loss_of(z)
            val = float(loss.data)
            if t == 0:
                initial.append(val)
            if np.isfinite(val) and val < run_best[0]:
                run_best = (val, z.data.copy(), x.data.copy())
            if t == steps or val <= stop_at or not np.isfinite(val):
                break
            z.grad = None
            loss.backward()
            opt.step()
        final.append(run_best[0])
        if run_best[1] is not None and (best is None or run_best[0] < best[0]):
            best = (run_best[0], run_best[1], run_best[2], r)
    if best is None:
        raise FloatingPointError("all CSGM restarts produced non-finite losses")
    loss, z, x, r = best
    return CSGMResult(z.reshape(gen.k), x.reshape(gen.image_shape), loss, initial, final, r)


@dataclass
class SweepRow:
    m: int
    errors: list[float]

    @property
    def median(self) -> float:
        return float(np.median(self.errors))


def csgm_measurement_sweep(gen: Generator, m_list, trials=5, seed=0, ensemble="gaussian", restarts=1, steps=500, lr=0.05, optimizer="adam", tol=0.0) -> list[SweepRow]:
    """Median relative recovery error of planted signals ``G(z*)`` per measurement count."""
    rows = []
    for m in m_list:
        errors = []
        for t in range(trials):
            trial_seed = [seed, int(m), t]
            rng = np.random.default_rng(trial_seed)
            z_true = rng.standard_normal(gen.k)
            x_true = gen.generate(z_true)
            op = Compressive(int(m), gen.image_shape, seed=int(rng.integers(2**31)), ensemble=ensemble)
            res = csgm_recover(gen, op, op.apply(x_true), restarts, steps, lr, int(rng.integers(2**31)), optimizer, tol=tol)
            errors.append(float(np.linalg.norm(res.x - x_true) / max(np.linalg.norm(x_true), 1e-300)))
        rows.append(SweepRow(int(m), errors))
    return rows
