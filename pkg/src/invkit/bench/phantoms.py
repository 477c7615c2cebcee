"""Synthetic test images and the out-of-distribution square feature."""

from __future__ import annotations

import numpy as np

PHANTOMS = ("shepp_logan", "shapes", "smooth_bump", "flat")

# (intensity, semi-axis a, semi-axis b, centre x, centre y, rotation in degrees)
# for the contrast-enhanced ("modified") head phantom on [-1, 1]^2.
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def _grid(h, w):
    ys = (np.arange(h) - (h - 1) / 2) / (h / 2)
    xs = (np.arange(w) - (w - 1) / 2) / (w / 2)
    return np.meshgrid(xs, -ys)


def shepp_logan(h, w):
    gx, gy = _grid(h, w)
    img = np.zeros((h, w))
    for val, a, b, x0, y0, deg in _SHEPP_LOGAN:
        t = np.deg2rad(deg)
        dx, dy = gx - x0, gy - y0
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += val
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo)


def shapes(h, w, rng):
    """A few rectangles and ellipses painted over a dark background."""
    img = np.full((h, w), 0.05 * rng.random())
    ii, jj = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(3, 7))):
        val = rng.uniform(0.2, 1.0)
        ci, cj = rng.uniform(0, h), rng.uniform(0, w)
        ri = rng.uniform(0.08, 0.3) * h
        rj = rng.uniform(0.08, 0.3) * w
        if rng.random() < 0.5:
            inside = (np.abs(ii - ci) <= ri) & (np.abs(jj - cj) <= rj)
        else:
            inside = ((ii - ci) / ri) ** 2 + ((jj - cj) / rj) ** 2 <= 1.0
        img[inside] = val
    return img


def smooth_bump(h, w, rng):
    ii, jj = np.mgrid[0:h, 0:w]
    ci, cj = rng.uniform(0.35, 0.65) * h, rng.uniform(0.35, 0.65) * w
    si, sj = rng.uniform(0.15, 0.3) * h, rng.uniform(0.15, 0.3) * w
    return 0.1 + 0.8 * np.exp(-(((ii - ci) / si) ** 2 + ((jj - cj) / sj) ** 2))


def make_phantom(kind, h, w, seed=0) -> np.ndarray:
    """Deterministic image with values in [0, 1]."""
    h, w = int(h), int(w)
    if h < 8 or w < 8:
        raise ValueError(f"phantom needs h, w >= 8, got {h}x{w}")
    rng = np.random.default_rng(seed)
    if kind == "flat":
        return np.full((h, w), 0.5)
    if kind == "shepp_logan":
        return shepp_logan(h, w)
    if kind == "shapes":
        return shapes(h, w, rng)
    if kind == "smooth_bump":
        return smooth_bump(h, w, rng)
    raise ValueError(f"unknown phantom {kind!r}; choose from {', '.join(PHANTOMS)}")


def make_dataset(kind, count, h, w, seed=0) -> np.ndarray:
    """``count`` phantoms; image ``i`` is seeded by ``(seed, i)``."""
    return np.stack([make_phantom(kind, h, w, [seed, i]) for i in range(count)]) if count else np.zeros((0, h, w))


def train_test_split(count, seed=0, train_fraction=0.8):
    order = np.random.default_rng([seed, 80]).permutation(count)
    n_train = int(round(train_fraction * count))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def square_slices(shape, size, position=None):
    h, w = shape
    size = int(size)
    if position is None:
        position = ((h - size) // 2, (w - size) // 2)
    i, j = (int(p) for p in position)
    if size < 0 or i < 0 or j < 0 or i + size > h or j + size > w:
        raise ValueError(f"square of size {size} at {(i, j)} does not fit in {h}x{w}")
    return slice(i, i + size), slice(j, j + size)


def insert_feature(x, size, intensity=1.0, position=None) -> np.ndarray:
    """Copy of ``x`` with a ``size`` x ``size`` square set to ``intensity``.

    ``position`` is the top-left corner; by default the square is centred.
    """
    x = np.asarray(x, dtype=np.float64)
    rows, cols = square_slices(x.shape[-2:], size, position)
    out = x.copy()
    out[..., rows, cols] = intensity
    return out
