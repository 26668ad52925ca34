import numpy as np
import pytest

from lcmatch import dgp


def test_sine_formula():
    s = dgp.gen_sine(500, 10, seed=1)
    X = s.dataset.X
    np.testing.assert_allclose(s.y0, np.sin(X[:, 0]))
    np.testing.assert_allclose(s.true_cate, -np.sin(X[:, 1]))
    assert X.min() >= -np.pi and X.max() <= np.pi


def test_exponential_formula():
    s = dgp.gen_exponential(400, 6, seed=2)
    X = s.dataset.X
    np.testing.assert_allclose(s.y0, 2 * np.exp(X[:, 0]) - np.exp(X[:, 1]) - np.exp(X[:, 2]))
    np.testing.assert_allclose(s.true_cate, np.exp(X[:, 3]))


def test_quadratic_formula_and_params():
    s = dgp.gen_quadratic(300, 8, k=4, seed=3)
    X = s.dataset.X[:, :4]
    a, b = np.array(s.params["alpha"]), np.array(s.params["beta"])
    np.testing.assert_allclose(s.y0, X @ a)
    np.testing.assert_allclose(s.true_cate, X @ b + X.sum(axis=1) ** 2)
    # the ordered-pair double sum equals the squared row sum
    pairs = sum(X[:, i] * X[:, j] for i in range(4) for j in range(4))
    np.testing.assert_allclose(X.sum(axis=1) ** 2, pairs)
    assert s.support == [0, 1, 2, 3]


def test_basic_quadratic_constant_effect():
    s = dgp.gen_basic_quadratic(100, 10, seed=0)
    np.testing.assert_allclose(s.true_cate, 10.0)
    np.testing.assert_allclose(s.y0, s.dataset.X[:, 0] ** 2)


def test_monte_carlo_moments():
    s = dgp.gen_quadratic(200_000, 3, k=3, seed=5)
    X = s.dataset.X
    assert X.mean() == pytest.approx(1.0, abs=0.01)
    assert X.var() == pytest.approx(1.5, rel=0.02)
    b = dgp.gen_basic_quadratic(200_000, 2, seed=6)
    assert b.dataset.X.var() == pytest.approx(2.5, rel=0.02)
    assert b.dataset.T.mean() == pytest.approx(0.5, abs=0.01)
    # noise: variance 1 around the realised potential outcome
    obs = np.where(b.dataset.T == 1, b.y1, b.y0)
    assert np.var(b.dataset.Y - obs) == pytest.approx(1.0, rel=0.02)
    sn = dgp.gen_sine(200_000, 2, seed=7)
    obs = np.where(sn.dataset.T == 1, sn.y1, sn.y0)
    assert np.var(sn.dataset.Y - obs) == pytest.approx(0.1, rel=0.02)


def test_treatment_depends_on_first_covariates():
    s = dgp.gen_sine(5000, 4, seed=8)
    X, T = s.dataset.X, s.dataset.T
    high = X[:, 0] + X[:, 1] > 2
    low = X[:, 0] + X[:, 1] < -2
    assert T[high].mean() > 0.9 and T[low].mean() < 0.1


def test_seed_determinism_and_validation():
    a, b = dgp.generate("quadratic", 100, 6, seed=9), dgp.generate("quadratic", 100, 6, seed=9)
    np.testing.assert_array_equal(a.dataset.Y, b.dataset.Y)
    with pytest.raises(ValueError):
        dgp.generate("nope", 10, 2)
    with pytest.raises(ValueError):
        dgp.gen_quadratic(10, 3, k=5)
    with pytest.raises(ValueError):
        dgp.gen_exponential(10, 3)


def test_frames():
    s = dgp.gen_sine(20, 3, seed=0)
    assert list(s.data_frame().columns) == ["t", "y", "X1", "X2", "X3"]
    assert list(s.truth_frame().columns) == ["unit", "y0", "y1", "true_cate"]
