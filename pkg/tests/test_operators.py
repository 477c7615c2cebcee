import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invkit.operators import (
    MRI,
    Compressive,
    Convolution,
    Identity,
    NoiseModel,
    OperatorError,
    PhaseRetrieval,
    Radon,
    Subsample,
    SuperResolution,
    add_noise,
    compressive_matrix,
    estimate_norm_sq,
    make_operator,
    named_kernel,
    radon_forward,
    random_mask,
)


def linear_ops(shape=(8, 8), seed=0):
    mask = random_mask(shape, 0.5, seed)
    rng = np.random.default_rng(seed)
    sens = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return [
        Identity(shape),
        Convolution(named_kernel("gaussian:1.0:5"), shape),
        Convolution(rng.standard_normal((3, 3)), shape),
        Subsample(mask),
        SuperResolution(named_kernel("box:3"), 2, shape),
        Compressive(20, shape, seed=seed),
        Compressive(20, shape, seed=seed, ensemble="bernoulli"),
        MRI(mask),
        MRI(mask, sens),
        Radon(shape, 6),
    ]


def dot_gap(op, rng):
    x = rng.standard_normal(op.input_shape)
    u = rng.standard_normal(op.output_size)
    ax = op.apply(x)
    return abs(ax @ u - np.sum(x * op.adjoint(u))) / (np.linalg.norm(ax) * np.linalg.norm(u))


# examples ------------------------------------------------------------------


def test_identity_spec_dims():
    op = make_operator({"kind": "identity", "n": 4})
    assert op.n == 4 and op.output_size == 4
    assert np.array_equal(op.apply(np.array([[1.0, 2.0, 3.0, 4.0]])), [1, 2, 3, 4])


def test_subsample_mask_cardinality_and_apply():
    op = make_operator({"kind": "subsample", "mask": [1, 0, 1, 0]})
    assert (op.output_size, op.n) == (2, 4)
    assert np.array_equal(op.apply(np.array([[1.0, 2, 3, 4]])), [1, 3])
    assert np.array_equal(op.adjoint(np.array([1.0, 3.0])), [[1, 0, 3, 0]])


def test_compressive_spec_deterministic():
    a = make_operator({"kind": "compressive", "m": 25, "n": 100, "seed": 7})
    b = make_operator({"kind": "compressive", "m": 25, "n": 100, "seed": 7})
    assert np.array_equal(a.matrix, b.matrix)
    assert a.matrix.shape == (25, 100)


def test_compressive_entry_variance():
    mat = compressive_matrix(200, 500, 3)
    # variance 1/m; standard error of the sample variance is about sqrt(2/N)/m
    assert abs(mat.var() * 200 - 1.0) < 5 * np.sqrt(2 / mat.size)


def test_convolution_impulse_example():
    op = make_operator({"kind": "convolution", "n": 5, "kernel": [0.25, 0.5, 0.25]})
    out = op.apply(np.array([[0.0, 0, 1, 0, 0]]))
    np.testing.assert_allclose(out, [0, 0.25, 0.5, 0.25, 0], atol=1e-15)


def test_convolution_matches_direct_periodic_sum(rng):
    k = rng.standard_normal((3, 5))
    x = rng.standard_normal((6, 7))
    op = Convolution(k, x.shape)
    direct = np.zeros_like(x)
    for i in range(6):
        for j in range(7):
            for a in range(3):
                for b in range(5):
                    direct[i, j] += k[a, b] * x[(i - a + 1) % 6, (j - b + 2) % 7]
    np.testing.assert_allclose(op.apply(x).reshape(6, 7), direct, atol=1e-12)


def test_identity_adjoint_example():
    op = Identity((1, 2))
    assert np.array_equal(op.adjoint(np.array([1.0, 2.0])), [[1, 2]])


def test_phase_retrieval_examples():
    op = make_operator({"kind": "phase_retrieval", "n": 2})
    assert np.array_equal(op.apply(np.array([[2.0, 0.0]])), [4, 0])
    op1 = make_operator({"kind": "phase_retrieval", "n": 1})
    assert np.array_equal(op1.jtvp(np.array([[3.0]]), np.array([1.0])), [[6.0]])
    with pytest.raises(OperatorError):
        op.adjoint(np.ones(2))


def test_phase_retrieval_sign_symmetry(rng):
    op = PhaseRetrieval(Compressive(30, (4, 4), seed=1))
    x = rng.standard_normal((4, 4))
    assert np.array_equal(op.apply(x), op.apply(-x))


def test_phase_retrieval_jtvp_finite_difference(rng):
    op = PhaseRetrieval(Compressive(12, (3, 3), seed=2))
    x = rng.standard_normal((3, 3))
    u = rng.standard_normal(12)
    g = op.jtvp(x, u)
    h = 1e-5
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fd[idx] = (op.apply(x + e) @ u - op.apply(x - e) @ u) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_linear_jtvp_is_adjoint(rng):
    for op in linear_ops():
        x = rng.standard_normal(op.input_shape)
        u = rng.standard_normal(op.output_size)
        assert np.array_equal(op.jtvp(x, u), op.adjoint(u))


def test_radon_zero_and_centre_pixel():
    assert not np.any(radon_forward(np.zeros((9, 9)), 7, 13))
    img = np.zeros((9, 9))
    img[4, 4] = 1.0
    sino = radon_forward(img, 7, 13).reshape(7, 13)
    np.testing.assert_allclose(sino.sum(axis=1), 1.0, atol=1e-8)


def test_radon_brute_force_line_sums(rng):
    # oracle: explicit loop over pixels with linear interpolation onto detector bins
    img = rng.random((5, 6))
    n_angles, n_det = 4, 9
    ref = np.zeros((n_angles, n_det))
    for a in range(n_angles):
        th = np.pi * a / n_angles
        for i in range(5):
            for j in range(6):
                s = np.cos(th) * (j - 2.5) + np.sin(th) * (2.0 - i) + (n_det - 1) / 2
                lo = int(np.floor(s))
                f = s - lo
                if 0 <= lo < n_det:
                    ref[a, lo] += (1 - f) * img[i, j]
                if 0 <= lo + 1 < n_det:
                    ref[a, lo + 1] += f * img[i, j]
    np.testing.assert_allclose(radon_forward(img, n_angles, n_det).reshape(n_angles, n_det), ref, atol=1e-12)


def test_radon_degenerate_geometry():
    with pytest.raises(OperatorError):
        Radon((4, 4), 3, 0)


# adjoint and linearity --------------------------------------------------------


def test_adjoint_identity_all_linear_kinds(rng):
    for op in linear_ops():
        for _ in range(20):
            assert dot_gap(op, rng) <= 1e-10, op


def test_linearity(rng):
    for op in linear_ops():
        x1, x2 = rng.standard_normal((2,) + op.input_shape)
        a, b = rng.standard_normal(2)
        lhs = op.apply(a * x1 + b * x2)
        rhs = a * op.apply(x1) + b * op.apply(x2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + np.abs(rhs).max()))


def test_stack_application_matches_loop(rng):
    for op in linear_ops():
        xs = rng.standard_normal((3,) + op.input_shape)
        np.testing.assert_allclose(op.apply(xs), np.stack([op.apply(x) for x in xs]), atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(
    h=st.integers(2, 9),
    w=st.integers(2, 9),
    seed=st.integers(0, 2**31),
    n_angles=st.integers(1, 6),
)
def test_adjoint_property_random_geometries(h, w, seed, n_angles):
    rng = np.random.default_rng(seed)
    k = rng.standard_normal((min(h, 3), min(w, 3)))
    ops = [Convolution(k, (h, w)), Radon((h, w), n_angles), Compressive(5, (h, w), seed=seed)]
    mask = rng.random((h, w)) < 0.5
    if mask.any():
        ops += [Subsample(mask), MRI(mask)]
    for op in ops:
        assert dot_gap(op, rng) <= 1e-10


# errors ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "spec",
    [
        {"kind": "warp", "n": 3},
        {"kind": "subsample", "mask": [0, 0, 0]},
        {"kind": "subsample", "mask": [0, 2, 1]},
        {"kind": "subsample", "mask": [1, 0], "shape": [1, 3]},
        {"kind": "convolution", "n": 3, "kernel": [float("nan")]},
        {"kind": "identity"},
    ],
)
def test_bad_specs(spec):
    with pytest.raises(OperatorError):
        make_operator(spec)


def test_dimension_mismatch():
    op = Identity((2, 2))
    with pytest.raises(OperatorError):
        op.apply(np.zeros((3, 3)))
    with pytest.raises(OperatorError):
        op.adjoint(np.zeros(5))


def test_spec_round_trip(rng):
    for op in linear_ops():
        if op.kind == "compressive":
            continue
        again = make_operator(op.to_spec())
        x = rng.standard_normal(op.input_shape)
        assert np.array_equal(again.apply(x), op.apply(x))


# noise ----------------------------------------------------------------------


def test_noise_zero_sigma_and_determinism(rng):
    y = rng.standard_normal(50)
    assert np.array_equal(add_noise(y, NoiseModel(0.0, 3)), y)
    assert np.array_equal(add_noise(y, NoiseModel(0.3, 3)), add_noise(y, NoiseModel(0.3, 3)))
    assert not np.array_equal(add_noise(y, NoiseModel(0.3, 3)), add_noise(y, NoiseModel(0.3, 4)))


def test_noise_variance_monte_carlo():
    sigma, n = 0.7, 100_000
    d = add_noise(np.zeros(n), NoiseModel(sigma, 11))
    se = sigma**2 * np.sqrt(2.0 / (n - 1))
    assert abs(d.var(ddof=1) - sigma**2) <= 3 * se


def test_negative_sigma_rejected():
    with pytest.raises(OperatorError):
        NoiseModel(-0.1)


def test_power_iteration_matches_svd():
    op = Compressive(15, (4, 5), seed=9)
    top = np.linalg.svd(op.matrix, compute_uv=False)[0] ** 2
    assert estimate_norm_sq(op, 200) == pytest.approx(top, rel=1e-6)
