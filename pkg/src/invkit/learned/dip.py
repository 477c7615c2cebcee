"""Untrained decoder priors fitted to a single measurement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..neuralkit import tensor as T
from ..neuralkit.layers import Network, build_decoder
from ..neuralkit.optim import Adam
from ..neuralkit.tensor import Tensor
from ..operators import ForwardOperator
from .models import forward_op


@dataclass
class DIPResult:
    final: np.ndarray
    best: np.ndarray
    best_iteration: int
    losses: np.ndarray
    checkpoints: dict[int, np.ndarray] = field(default_factory=dict)
    n_parameters: int = 0


def plateau_index(losses, window=50, rel_change=1e-3):
    """First iteration ``t`` with ``|L[t] - L[t-window]| < rel_change * L[t-window]``, else None."""
    losses = np.asarray(losses)
    for t in range(window, len(losses)):
        prev = losses[t - window]
        if abs(losses[t] - prev) < rel_change * abs(prev):
            return t
    return None


def iterations_to_reach(losses, threshold):
    """Number of iterations until the loss first drops to ``threshold`` (None if never)."""
    hit = np.nonzero(np.asarray(losses) <= threshold)[0]
    return int(hit[0]) if hit.size else None


def dip_reconstruct(
    op: ForwardOperator,
    y,
    decoder: Network | None = None,
    iterations=1000,
    checkpoint_every=100,
    seed=0,
    lr=0.01,
    stages=4,
    channels=8,
    window=50,
    rel_change=1e-3,
    stop_below=None,
) -> DIPResult:
    """Fit decoder weights to ``y`` with Adam from a fixed random latent.

    The loss is the mean squared measurement misfit ``||A(G(z)) - y||^2 / m``.
    ``best`` is the iterate at the first plateau of that loss (the early
    stopping heuristic); ``final`` is the last iterate. Reconstructions are
    kept every ``checkpoint_every`` iterations so any other iterate can be
    chosen afterwards. With ``stop_below`` set, fitting ends as soon as the
    loss reaches it.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    y = np.asarray(getattr(y, "data", y), dtype=np.float64).reshape(1, -1)
    rng = np.random.default_rng(seed)
    if decoder is None:
        h, w = op.input_shape
        f = 2**stages
        k = channels * (h // f) * (w // f)
        decoder = build_decoder(k, stages, seed, op.input_shape, channels)
    first = decoder.layers[0]
    k = first.n_in if hasattr(first, "n_in") else int(np.prod(first.shape))
    z = Tensor(rng.uniform(0.0, 1.0, size=(1, k)))
    optim = Adam(decoder.parameters(), lr)
    target = Tensor(y)
    m = y.shape[1]

    losses = []
    checkpoints = {}
    best, best_it = None, None
    x = None
    for t in range(iterations):
        out = decoder(z)
        x = out.data.reshape(op.input_shape)
        loss = T.sum_squares(forward_op(op, out) - target) * (1.0 / m)
        val = float(loss.data)
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite DIP loss at iteration {t}")
        losses.append(val)
        if checkpoint_every and t % checkpoint_every == 0:
            checkpoints[t] = x.copy()
        if best is None and t >= window and abs(val - losses[t - window]) < rel_change * abs(losses[t - window]):
            best, best_it = x.copy(), t
        if stop_below is not None and val <= stop_below:
            break
        optim.zero_grad()
        loss.backward()
        optim.step()
    final = decoder(z).data.reshape(op.input_shape)
    if best is None:
        best, best_it = final.copy(), len(losses)
    checkpoints[len(losses)] = final.copy()
    return DIPResult(final, best, best_it, np.array(losses), checkpoints, decoder.n_parameters())
