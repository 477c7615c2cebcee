# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the Radon projector pair and the TV dual prox.

Every function here has a numpy twin in :mod:`invkit._fallback` with the
same signature; :mod:`invkit.kernels` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, cos, sin, M_PI

cnp.import_array()


def radon_forward(const double[:, ::1] image, int n_angles, int n_detectors):
    cdef Py_ssize_t h = image.shape[0], w = image.shape[1]
    cdef Py_ssize_t a, i, j
    cdef int b
    cdef double theta, c, s, xc, yc, pos, frac, v
    cdef double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0, cd = (n_detectors - 1) / 2.0
    out = np.zeros((n_angles, n_detectors), dtype=np.float64)
    cdef double[:, ::1] sino = out
    for a in range(n_angles):
        theta = M_PI * a / n_angles
        c = cos(theta)
        s = sin(theta)
        for i in range(h):
            yc = cy - i
            for j in range(w):
                v = image[i, j]
                if v == 0.0:
                    continue
                xc = j - cx
                pos = xc * c + yc * s + cd
                b = <int>floor(pos)
                frac = pos - b
                if 0 <= b < n_detectors:
                    sino[a, b] += (1.0 - frac) * v
                if 0 <= b + 1 < n_detectors:
                    sino[a, b + 1] += frac * v
    return out


def radon_adjoint(const double[:, ::1] sinogram, int h, int w):
    cdef Py_ssize_t n_angles = sinogram.shape[0], n_detectors = sinogram.shape[1]
    cdef Py_ssize_t a, i, j
    cdef int b
    cdef double theta, c, s, xc, yc, pos, frac, acc
    cdef double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0, cd = (n_detectors - 1) / 2.0
    out = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] img = out
    for a in range(n_angles):
        theta = M_PI * a / n_angles
        c = cos(theta)
        s = sin(theta)
        for i in range(h):
            yc = cy - i
            for j in range(w):
                xc = j - cx
                pos = xc * c + yc * s + cd
                b = <int>floor(pos)
                frac = pos - b
                acc = 0.0
                if 0 <= b < n_detectors:
                    acc += (1.0 - frac) * sinogram[a, b]
                if 0 <= b + 1 < n_detectors:
                    acc += frac * sinogram[a, b + 1]
                img[i, j] += acc
    return out


def tv_prox(const double[:, ::1] z, double weight, int n_iter):
    """Anisotropic periodic TV prox by projected gradient on the dual."""
    cdef Py_ssize_t h = z.shape[0], w = z.shape[1]
    cdef Py_ssize_t i, j, ip, jp, im, jm, k
    cdef double tau = 0.125, q
    ph_arr = np.zeros((h, w), dtype=np.float64)
    pv_arr = np.zeros((h, w), dtype=np.float64)
    x_arr = np.array(z, dtype=np.float64, copy=True)
    cdef double[:, ::1] ph = ph_arr
    cdef double[:, ::1] pv = pv_arr
    cdef double[:, ::1] x = x_arr
    if weight <= 0.0:
        return x_arr
    for k in range(n_iter):
        # dual ascent step on p, using x = z - D^T p from the previous sweep
        for i in range(h):
            ip = i + 1 if i + 1 < h else 0
            for j in range(w):
                jp = j + 1 if j + 1 < w else 0
                q = ph[i, j] + tau * (x[i, jp] - x[i, j])
                ph[i, j] = weight if q > weight else (-weight if q < -weight else q)
                q = pv[i, j] + tau * (x[ip, j] - x[i, j])
                pv[i, j] = weight if q > weight else (-weight if q < -weight else q)
        # x = z - D^T p, with (D^T p)_ij = p_{i,j-1} - p_{ij} per direction
        for i in range(h):
            im = i - 1 if i > 0 else h - 1
            for j in range(w):
                jm = j - 1 if j > 0 else w - 1
                x[i, j] = z[i, j] - (ph[i, jm] - ph[i, j]) - (pv[im, j] - pv[i, j])
    return x_arr
