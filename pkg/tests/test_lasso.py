import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcmatch import lasso
from oracles import centred_orthonormal, orthonormal_lasso


def test_soft_threshold():
    assert lasso.soft_threshold(3.0, 1.0) == 2.0
    assert lasso.soft_threshold(-3.0, 1.0) == -2.0
    assert lasso.soft_threshold(0.5, 1.0) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_orthonormal_closed_form(seed):
    rng = np.random.default_rng(seed)
    Q = centred_orthonormal(80, 6, rng)
    y = Q @ rng.normal(0, 3, 6) + rng.normal(size=80) + 4.0
    for lam in (0.0, 0.5, 2.0, 6.0):
        fit = lasso.fit_lasso(Q, y, lam, tol=1e-12)
        np.testing.assert_allclose(fit.beta, orthonormal_lasso(Q, y, lam), atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_zero_penalty_is_ols(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 5))
    y = X @ rng.normal(size=5) + 2.0 + rng.normal(size=60)
    fit = lasso.fit_lasso(X, y, 0.0, tol=1e-12)
    D = np.column_stack([np.ones(60), X])
    coef = np.linalg.lstsq(D, y, rcond=None)[0]
    np.testing.assert_allclose(fit.beta, coef[1:], atol=1e-6)
    assert fit.intercept == pytest.approx(coef[0], abs=1e-6)


def test_kkt_on_random_problems():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        n, p = rng.integers(20, 80), rng.integers(2, 30)
        X = rng.normal(size=(n, p))
        y = X[:, 0] * 2 - X[:, 1] + rng.normal(size=n)
        lam = lasso.lambda_max(X, y) * rng.uniform(0.01, 0.9)
        fit = lasso.fit_lasso(X, y, lam, tol=1e-10)
        worst = max(worst, lasso.kkt_residual(X, y, fit))
    assert worst < 1e-4


def test_lambda_max_zeroes_everything():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 4))
    y = X[:, 0] + rng.normal(size=50)
    top = lasso.lambda_max(X, y)
    assert not lasso.fit_lasso(X, y, top).beta.any()
    assert lasso.fit_lasso(X, y, 0.95 * top).beta.any()
    grid = lasso.lambda_path(X, y, 10, 1e-3)
    assert grid[0] == pytest.approx(top) and grid[-1] == pytest.approx(top * 1e-3)
    assert np.all(np.diff(grid) < 0)


def test_objective_never_increases_across_sweeps():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(100, 20))
    X[:, 1] = X[:, 0] + 0.05 * rng.normal(size=100)
    y = X[:, 0] - X[:, 2] + rng.normal(size=100)
    trace = np.full(500, np.nan)
    fit = lasso.fit_lasso(X, y, 0.1 * lasso.lambda_max(X, y), tol=1e-12, trace=trace)
    obj = trace[np.isfinite(trace)]
    assert len(obj) >= 2
    assert np.all(np.diff(obj) <= 1e-9 * obj[0])
    assert obj[-1] == pytest.approx(lasso.objective(X, y, fit), rel=1e-9)


def test_constant_outcome_gives_zero_coefficients():
    X = np.random.default_rng(4).normal(size=(30, 3))
    fit = lasso.cv_lasso(X, np.full(30, 2.0))
    assert not fit.beta.any() and fit.intercept == 2.0
    with pytest.warns(UserWarning, match="constant"):
        assert lasso.lambda_path(X, np.ones(30)).tolist() == [0.0]


def test_cv_lasso_deterministic_and_recovers_support():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(300, 30))
    y = 3 * X[:, 0] - 2 * X[:, 5] + rng.normal(size=300)
    a = lasso.cv_lasso(X, y, seed=1)
    b = lasso.cv_lasso(X, y, seed=1)
    np.testing.assert_array_equal(a.beta, b.beta)
    big = np.argsort(-np.abs(a.beta))[:2]
    assert set(big) == {0, 5}
    assert a.cv_errors.shape == (100,)
    assert a.lam == a.cv_lambdas[np.argmin(a.cv_errors)]


def test_non_convergence_warns():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 10))
    y = X @ rng.normal(size=10)
    with pytest.warns(lasso.ConvergenceWarning):
        fit = lasso.fit_lasso(X, y, 1e-6, tol=1e-15, max_sweeps=2)
    assert not fit.converged


def test_rejects_negative_lambda():
    with pytest.raises(ValueError):
        lasso.fit_lasso(np.ones((3, 1)), np.arange(3.0), -1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.integers(1, 3))
def test_strong_signal_support_recovered(seed, s):
    rng = np.random.default_rng(seed)
    n, p = 200, 12
    X = rng.normal(size=(n, p))
    support = rng.choice(p, s, replace=False)
    beta = np.zeros(p)
    beta[support] = rng.choice([-1, 1], s) * rng.uniform(3, 5, s)
    y = X @ beta + 0.1 * rng.normal(size=n)
    lam = 0.2 * lasso.lambda_max(X, y)
    fit = lasso.fit_lasso(X, y, lam)
    assert set(np.flatnonzero(fit.beta)) == set(support)
