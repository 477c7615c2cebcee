"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def _radon_geometry(h, w, n_angles, n_detectors):
    thetas = np.pi * np.arange(n_angles) / n_angles
    xc = np.arange(w) - (w - 1) / 2.0
    yc = (h - 1) / 2.0 - np.arange(h)
    pos = (
        np.cos(thetas)[:, None, None] * xc[None, None, :]
        + np.sin(thetas)[:, None, None] * yc[None, :, None]
        + (n_detectors - 1) / 2.0
    ).reshape(n_angles, h * w)
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    return lo, frac


def radon_forward(image, n_angles, n_detectors):
    h, w = image.shape
    lo, frac = _radon_geometry(h, w, n_angles, n_detectors)
    v = np.ascontiguousarray(image, dtype=np.float64).ravel()
    out = np.zeros((n_angles, n_detectors))
    for a in range(n_angles):
        b = lo[a]
        f = frac[a]
        ok = (b >= 0) & (b < n_detectors)
        out[a] += np.bincount(b[ok], weights=(1.0 - f[ok]) * v[ok], minlength=n_detectors)
        ok = (b + 1 >= 0) & (b + 1 < n_detectors)
        out[a] += np.bincount(b[ok] + 1, weights=f[ok] * v[ok], minlength=n_detectors)
    return out


def radon_adjoint(sinogram, h, w):
    n_angles, n_detectors = sinogram.shape
    lo, frac = _radon_geometry(h, w, n_angles, n_detectors)
    out = np.zeros(h * w)
    for a in range(n_angles):
        row = sinogram[a]
        b = lo[a]
        f = frac[a]
        ok = (b >= 0) & (b < n_detectors)
        lo_val = np.where(ok, row[np.clip(b, 0, n_detectors - 1)], 0.0)
        ok1 = (b + 1 >= 0) & (b + 1 < n_detectors)
        hi_val = np.where(ok1, row[np.clip(b + 1, 0, n_detectors - 1)], 0.0)
        out += (1.0 - f) * lo_val + f * hi_val
    return out.reshape(h, w)


def tv_prox(z, weight, n_iter):
    """Anisotropic periodic TV prox by projected gradient on the dual."""
    z = np.asarray(z, dtype=np.float64)
    x = z.copy()
    if weight <= 0.0:
        return x
    tau = 0.125
    ph = np.zeros_like(z)
    pv = np.zeros_like(z)
    for _ in range(n_iter):
        ph = np.clip(ph + tau * (np.roll(x, -1, axis=1) - x), -weight, weight)
        pv = np.clip(pv + tau * (np.roll(x, -1, axis=0) - x), -weight, weight)
        x = z - (np.roll(ph, 1, axis=1) - ph) - (np.roll(pv, 1, axis=0) - pv)
    return x
