import numpy as np
import pytest

from invkit.regularizers import Regularizer, prox, soft_threshold, tv, value


def test_value_examples():
    assert value(Regularizer("l1", 1.0), np.array([1.0, -2.0])) == 3.0
    assert value(Regularizer("tv", 0.7), np.full((4, 5), 3.2)) == 0.0
    assert value(Regularizer("tikhonov", 2.0), np.array([1.0, 1.0])) == 2.0
    assert value(Regularizer(), np.ones(3)) == 0.0


def test_tv_hand_computed():
    x = np.array([[0.0, 1.0], [2.0, 4.0]])
    # horizontal periodic diffs: |1|,|1|,|2|,|2| ; vertical: |2|,|3|,|2|,|3|
    assert tv(x) == 16.0


def test_prox_examples():
    assert prox(Regularizer("tikhonov", 1.0), np.array([2.0]), 1.0) == pytest.approx([1.0])
    assert prox(Regularizer("l1", 1.0), np.array([0.5]), 1.0) == pytest.approx([0.0])
    assert prox(Regularizer("l1", 1.0), np.array([2.0]), 0.5) == pytest.approx([1.5])
    z = np.array([[0.3, -7.0]])
    assert np.array_equal(prox(Regularizer(), z, 3.0), z)


def test_prox_t_zero_identity(rng):
    z = rng.standard_normal((5, 5))
    for kind in ("tikhonov", "l1", "tv"):
        assert np.array_equal(prox(Regularizer(kind, 1.0), z, 0.0), z)


def test_parse_and_str():
    assert Regularizer.parse("tv:0.1") == Regularizer("tv", 0.1, 20)
    assert Regularizer.parse("tv:0.1:50").inner_iters == 50
    assert Regularizer.parse("zero") == Regularizer()
    assert str(Regularizer.parse("l1:0.05")) == "l1:0.05"
    for bad in ("l1", "tv:abc", "wavelet:1"):
        with pytest.raises(ValueError):
            Regularizer.parse(bad)
    with pytest.raises(ValueError):
        Regularizer("l1", -1.0)


def test_value_nonnegative(rng):
    for kind in ("zero", "tikhonov", "l1", "tv"):
        for _ in range(20):
            assert value(Regularizer(kind, rng.uniform(0, 3)), rng.standard_normal((4, 4))) >= 0


@pytest.mark.parametrize("kind", ["tikhonov", "l1"])
def test_prox_brute_force_dominance(kind, rng):
    reg = Regularizer(kind, 0.8)
    for _ in range(5):
        z = rng.standard_normal((3, 3))
        t = rng.uniform(0.1, 2.0)
        p = prox(reg, z, t)
        best = 0.5 * np.sum((p - z) ** 2) + t * value(reg, p)
        cands = p + rng.standard_normal((1000, 3, 3)) * rng.uniform(0.001, 1.0, (1000, 1, 1))
        for x in cands:
            assert best <= 0.5 * np.sum((x - z) ** 2) + t * value(reg, x) + 1e-12


@pytest.mark.parametrize("kind", ["zero", "tikhonov", "l1", "tv"])
def test_nonexpansive(kind, rng):
    reg = Regularizer(kind, 0.5)
    for _ in range(50):
        z1, z2 = rng.standard_normal((2, 6, 6))
        t = rng.uniform(0.1, 1.0)
        assert np.linalg.norm(prox(reg, z1, t) - prox(reg, z2, t)) <= np.linalg.norm(z1 - z2) * (1 + 1e-10)


def test_tv_prox_decrease(rng):
    for _ in range(30):
        z = rng.standard_normal((8, 8))
        t = rng.uniform(0.01, 1.0)
        reg = Regularizer("tv", 1.0, int(rng.integers(1, 40)))
        p = prox(reg, z, t)
        assert 0.5 * np.sum((p - z) ** 2) + t * tv(p) <= t * tv(z) + 1e-12


def test_tv_prox_stack_matches_loop(rng):
    zs = rng.standard_normal((3, 6, 5))
    reg = Regularizer("tv", 0.3)
    np.testing.assert_array_equal(prox(reg, zs, 1.0), np.stack([prox(reg, z, 1.0) for z in zs]))


def test_soft_threshold_vectorized():
    np.testing.assert_array_equal(soft_threshold(np.array([-3.0, -0.5, 0.0, 0.5, 3.0]), 1.0), [-2, 0, 0, 0, 2])


def test_prox_pure(rng):
    z = rng.standard_normal((4, 4))
    keep = z.copy()
    for kind in ("tikhonov", "l1", "tv", "zero"):
        prox(Regularizer(kind, 1.0), z, 0.5)
    assert np.array_equal(z, keep)
