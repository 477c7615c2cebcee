import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invkit import kernels
from invkit.regularizers import tv

cython = pytest.importorskip("invkit._kernels")
python = kernels.get_backend("python")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.get_backend("python") is python
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), n_angles=st.integers(1, 8), n_det=st.integers(1, 20), seed=st.integers(0, 2**31))
def test_radon_parity(h, w, n_angles, n_det, seed):
    rng = np.random.default_rng(seed)
    img = rng.standard_normal((h, w))
    sino = rng.standard_normal((n_angles, n_det))
    np.testing.assert_allclose(cython.radon_forward(img, n_angles, n_det), python.radon_forward(img, n_angles, n_det), atol=1e-12)
    np.testing.assert_allclose(cython.radon_adjoint(sino, h, w), python.radon_adjoint(sino, h, w), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 10), w=st.integers(1, 10), weight=st.floats(0, 2), iters=st.integers(1, 30), seed=st.integers(0, 2**31))
def test_tv_prox_parity(h, w, weight, iters, seed):
    z = np.random.default_rng(seed).standard_normal((h, w))
    np.testing.assert_allclose(cython.tv_prox(z, weight, iters), python.tv_prox(z, weight, iters), atol=1e-12)


def test_tv_prox_decreases_objective():
    rng = np.random.default_rng(5)
    for backend in (cython, python):
        for _ in range(10):
            z = rng.standard_normal((12, 9))
            t = rng.uniform(0.05, 1.0)
            p = backend.tv_prox(z, t, 20)
            assert 0.5 * np.sum((p - z) ** 2) + t * tv(p) <= t * tv(z) + 1e-12


def test_forced_fallback_in_subprocess():
    import subprocess
    import sys

    code = "import invkit.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"INVKIT_KERNELS": "python", "PATH": ""}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
