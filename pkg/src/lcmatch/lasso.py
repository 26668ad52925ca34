"""L1-penalised least squares by cyclic coordinate descent.

The objective is the un-normalised form

    lam * ||beta||_1 + sum_i (y_i - b0 - x_i . beta)^2

with an unpenalised intercept ``b0``.  Because the squared-error term is a sum
(not a mean), the largest useful penalty grows with ``n``; the lambda grid from
:func:`lambda_path` is on that same scale.

Convergence: a full sweep in which no coefficient moves by ``tol * sd(y)`` or
more.  Paths stop descending once the fit explains ``MAX_R2`` of the variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .dataset import make_folds

TOL = 1e-7
MAX_SWEEPS = 10_000
N_LAMBDAS = 100
EPS_RATIO = 1e-3
K_FOLDS = 5
MAX_R2 = 0.999


class ConvergenceWarning(UserWarning):
    pass


def soft_threshold(z: float, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


@njit(cache=True, nogil=True)
def _cd(X, y, beta, colnorm2, lam, tol, max_sweeps, trace):
    """Coordinate descent on centred data, updating ``beta`` in place.

    Alternates full sweeps with sweeps restricted to the active set; stops when
    a full sweep moves no coefficient by ``tol`` or more.  When ``trace`` has
    nonzero length the objective after each sweep is written into it.
    Returns (sweeps used, converged flag).
    """
    n, p = X.shape
    half = 0.5 * lam
    r = y - X @ beta
    active = np.empty(p, dtype=np.int64)
    n_active = 0
    full = True
    sweeps = 0
    while sweeps < max_sweeps:
        max_change = 0.0
        count = p if full else n_active
        for idx in range(count):
            j = idx if full else active[idx]
            c = colnorm2[j]
            if c == 0.0:
                continue
            bj = beta[j]
            rho = c * bj
            for i in range(n):
                rho += X[i, j] * r[i]
            if rho > half:
                new = (rho - half) / c
            elif rho < -half:
                new = (rho + half) / c
            else:
                new = 0.0
            delta = new - bj
            if delta != 0.0:
                for i in range(n):
                    r[i] -= delta * X[i, j]
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if sweeps < trace.shape[0]:
            obj = half * 2.0 * np.abs(beta).sum()
            for i in range(n):
                obj += r[i] * r[i]
            trace[sweeps] = obj
        sweeps += 1
        if max_change < tol:
            if full:
                return sweeps, True
            full = True
        else:
            if full:
                n_active = 0
                for j in range(p):
                    if beta[j] != 0.0:
                        active[n_active] = j
                        n_active += 1
            full = False
    return sweeps, False


@dataclass
class LassoFit:
    beta: np.ndarray
    intercept: float
    lam: float
    n_iters: int
    converged: bool
    cv_lambdas: Optional[np.ndarray] = field(default=None, repr=False)
    cv_errors: Optional[np.ndarray] = field(default=None, repr=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + X @ self.beta

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "intercept": self.intercept,
            "nonzero": int(np.count_nonzero(self.beta)),
            "l1": float(np.abs(self.beta).sum()),
            "n_iters": self.n_iters,
            "converged": self.converged,
        }


def _center(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = np.asfortranarray(X - x_mean)
    return Xc, y - y_mean, x_mean, y_mean


def _abs_tol(yc, tol):
    sd = np.sqrt((yc * yc).mean()) if yc.size else 0.0
    return float(tol * sd) if sd > 0 else float(tol)


def fit_lasso(X, y, lam: float, tol: float = TOL, max_sweeps: int = MAX_SWEEPS,
              beta0=None, trace: Optional[np.ndarray] = None) -> LassoFit:
    """Minimise the penalised sum of squares at a single ``lam``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    Xc, yc, x_mean, y_mean = _center(X, y)
    if Xc.shape[0] < 1:
        raise ValueError("need at least one row")
    beta = np.zeros(Xc.shape[1]) if beta0 is None else np.array(beta0, dtype=float)
    colnorm2 = (Xc * Xc).sum(axis=0)
    if trace is None:
        trace = np.empty(0)
    sweeps, ok = _cd(Xc, yc, beta, colnorm2, float(lam), _abs_tol(yc, tol), int(max_sweeps), trace)
    if not ok:
        warnings.warn(f"lasso did not converge in {max_sweeps} sweeps at lambda={lam:.4g}",
                      ConvergenceWarning, stacklevel=2)
    return LassoFit(beta, float(y_mean - x_mean @ beta), float(lam), int(sweeps), bool(ok))


def lambda_max(X, y) -> float:
    """Smallest penalty at which every coefficient is exactly zero."""
    Xc, yc, _, _ = _center(X, y)
    if Xc.shape[1] == 0:
        return 0.0
    return float(2.0 * np.abs(Xc.T @ yc).max())


def lambda_path(X, y, n_lambdas: int = N_LAMBDAS, eps_ratio: float = EPS_RATIO) -> np.ndarray:
    """Log-spaced decreasing grid from ``lambda_max`` to ``eps_ratio * lambda_max``."""
    if n_lambdas < 2:
        raise ValueError("n_lambdas must be at least 2")
    top = lambda_max(X, y)
    if top == 0.0:
        warnings.warn("outcome is constant (or no covariates); degenerate lambda grid", stacklevel=2)
        return np.array([0.0])
    return np.geomspace(top, top * eps_ratio, n_lambdas)


def lasso_path(X, y, lambdas, tol: float = TOL, max_sweeps: int = MAX_SWEEPS,
               max_r2: float = MAX_R2) -> tuple:
    """Warm-started fits along ``lambdas``; returns (coefs p x L, intercepts, converged).

    Once R^2 reaches ``max_r2`` the remaining grid points reuse that fit.
    """
    Xc, yc, x_mean, y_mean = _center(X, y)
    p = Xc.shape[1]
    colnorm2 = (Xc * Xc).sum(axis=0)
    tss = float((yc * yc).sum())
    abs_tol = _abs_tol(yc, tol)
    beta = np.zeros(p)
    coefs = np.empty((p, len(lambdas)))
    converged = np.ones(len(lambdas), dtype=bool)
    empty = np.empty(0)
    saturated = False
    for k, lam in enumerate(lambdas):
        if not saturated:
            _, converged[k] = _cd(Xc, yc, beta, colnorm2, float(lam), abs_tol, int(max_sweeps), empty)
            if tss > 0:
                r = yc - Xc @ beta
                saturated = 1.0 - (r @ r) / tss >= max_r2
        coefs[:, k] = beta
    intercepts = y_mean - x_mean @ coefs
    return coefs, intercepts, converged


def cv_lasso(X, y, k_folds: int = K_FOLDS, n_lambdas: int = N_LAMBDAS, seed=0,
             eps_ratio: float = EPS_RATIO, tol: float = TOL, max_sweeps: int = MAX_SWEEPS) -> LassoFit:
    """Pick lambda by minimum mean out-of-fold squared error, then refit on all rows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    if n < k_folds:
        raise ValueError(f"n={n} rows cannot support {k_folds}-fold cross-validation")
    if p == 0 or np.ptp(y) == 0.0:
        return LassoFit(np.zeros(p), float(y.mean()), 0.0, 0, True)

    lambdas = lambda_path(X, y, n_lambdas, eps_ratio)
    plan = make_folds(n, k_folds, seed)
    errors = np.zeros((k_folds, len(lambdas)))
    all_ok = True
    for f in range(k_folds):
        train, held = plan.complement(f), plan.rows(f)
        coefs, intercepts, ok = lasso_path(X[train], y[train], lambdas, tol, max_sweeps)
        all_ok &= bool(ok.all())
        resid = y[held, None] - (intercepts[None, :] + X[held] @ coefs)
        errors[f] = (resid ** 2).mean(axis=0)
    mean_err = errors.mean(axis=0)
    best = int(np.argmin(mean_err))

    coefs, intercepts, ok = lasso_path(X, y, lambdas[: best + 1], tol, max_sweeps)
    all_ok &= bool(ok.all())
    if not all_ok:
        warnings.warn("cross-validated lasso: some path fits did not converge", ConvergenceWarning, stacklevel=2)
    return LassoFit(coefs[:, best].copy(), float(intercepts[best]), float(lambdas[best]),
                    0, bool(ok[best]), cv_lambdas=lambdas, cv_errors=mean_err)


def objective(X, y, fit: LassoFit) -> float:
    r = np.asarray(y) - fit.predict(np.asarray(X))
    return float(fit.lam * np.abs(fit.beta).sum() + (r * r).sum())


def kkt_residual(X, y, fit: LassoFit) -> float:
    """Largest violation of the optimality conditions, relative to ``lam``.

    For nonzero beta_j: 2 x_j.r = lam * sign(beta_j); for zero beta_j:
    |2 x_j.r| <= lam.  Residuals use centred columns (intercept profiled out).
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(y) - fit.predict(X)
    grad = 2.0 * (X - X.mean(axis=0)).T @ r
    lam = fit.lam
    scale = lam if lam > 0 else 1.0
    nz = fit.beta != 0
    viol = np.zeros_like(grad)
    viol[nz] = np.abs(grad[nz] - lam * np.sign(fit.beta[nz])) / scale
    viol[~nz] = np.maximum(np.abs(grad[~nz]) - lam, 0.0) / scale
    return float(viol.max()) if viol.size else 0.0
