"""Synthetic data with known potential outcomes.

Normal distributions are parameterised as N(mean, variance); sampling uses the
square root of the second argument as the standard deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit as _expit

from .dataset import Dataset

MAX_DRAWS = 10
POSITIVITY = (0.05, 0.95)


def expit(x):
    """Logistic sigmoid 1 / (1 + exp(-x))."""
    return _expit(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class DgpSample:
    dataset: Dataset
    y0: np.ndarray
    y1: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def true_cate(self) -> np.ndarray:
        return self.y1 - self.y0

    @property
    def true_ate(self) -> float:
        return float(self.true_cate.mean())

    @property
    def support(self) -> list:
        return list(self.params["support"])

    def truth_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"unit": np.arange(len(self.y0)), "y0": self.y0, "y1": self.y1,
                             "true_cate": self.true_cate})

    def data_frame(self) -> pd.DataFrame:
        d = self.dataset
        df = pd.DataFrame(d.X, columns=d.column_names)
        df.insert(0, "y", d.Y)
        df.insert(0, "t", d.T.astype(int))
        return df


def sine_outcomes(X):
    y0 = np.sin(X[:, 0])
    return y0, y0 - np.sin(X[:, 1])


def exponential_outcomes(X):
    y0 = 2 * np.exp(X[:, 0]) - np.exp(X[:, 1]) - np.exp(X[:, 2])
    return y0, y0 + np.exp(X[:, 3])


def quadratic_outcomes(X, alpha, beta):
    """Y(0) = sum_j a_j x_j;  Y(1) = Y(0) + sum_j b_j x_j + sum_j sum_j' x_j x_j'.

    The double sum runs over ordered pairs (squares and both cross orders),
    i.e. it equals (sum_j x_j)^2.
    """
    k = len(alpha)
    Xk = X[:, :k]
    y0 = Xk @ alpha
    return y0, y0 + Xk @ beta + Xk.sum(axis=1) ** 2


def basic_quadratic_outcomes(X):
    y0 = X[:, 0] ** 2
    return y0, y0 + 10.0


def _draws(seed):
    for attempt in range(MAX_DRAWS):
        yield attempt, np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, attempt]))


def _balanced(T, n):
    frac = T.mean()
    if n >= 500:
        return POSITIVITY[0] < frac < POSITIVITY[1]
    return 0 < frac < 1


def _finish(X, T, y0, y1, noise_sd, rng, params):
    Y = np.where(T == 1, y1, y0) + rng.normal(0.0, noise_sd, len(T))
    return DgpSample(Dataset(X, T, Y), y0, y1, params)


def gen_sine(n: int, p: int, seed=0) -> DgpSample:
    if p < 2:
        raise ValueError("sine needs p >= 2")
    for attempt, rng in _draws(seed):
        X = rng.uniform(-np.pi, np.pi, (n, p))
        T = (expit(X[:, 0] + X[:, 1] + rng.normal(0, 1, n)) > 0.5).astype(int)
        if _balanced(T, n):
            break
    y0, y1 = sine_outcomes(X)
    params = dict(name="sine", n=n, p=p, seed=seed, attempt=attempt, noise_var=0.1, support=[0, 1])
    return _finish(X, T, y0, y1, np.sqrt(0.1), rng, params)


def gen_exponential(n: int, p: int, seed=0) -> DgpSample:
    if p < 4:
        raise ValueError("exponential needs p >= 4")
    for attempt, rng in _draws(seed):
        X = rng.uniform(-3.0, 3.0, (n, p))
        T = (expit(X[:, 0] + X[:, 1] + rng.normal(0, 1, n)) > 0.5).astype(int)
        if _balanced(T, n):
            break
    y0, y1 = exponential_outcomes(X)
    params = dict(name="exponential", n=n, p=p, seed=seed, attempt=attempt, noise_var=1.0, support=[0, 1, 2, 3])
    return _finish(X, T, y0, y1, 1.0, rng, params)


def gen_quadratic(n: int, p: int, k: int = 5, kappa: int = 2, seed=0) -> DgpSample:
    if not 0 < kappa <= k <= p:
        raise ValueError(f"need 0 < kappa <= k <= p, got kappa={kappa}, k={k}, p={p}")
    for attempt, rng in _draws(seed):
        X = rng.normal(1.0, np.sqrt(1.5), (n, p))
        s = rng.choice([-1.0, 1.0], k)
        alpha = rng.normal(10.0 * s, 3.0)
        beta = rng.normal(1.0, 0.5, k)
        T = (expit(X[:, :kappa].sum(axis=1) - kappa + rng.normal(0, 1, n)) > 0.5).astype(int)
        if _balanced(T, n):
            break
    y0, y1 = quadratic_outcomes(X, alpha, beta)
    params = dict(name="quadratic", n=n, p=p, k=k, kappa=kappa, seed=seed, attempt=attempt, noise_var=1.0,
                  alpha=alpha.tolist(), beta=beta.tolist(), s=s.tolist(), support=list(range(k)))
    return _finish(X, T, y0, y1, 1.0, rng, params)


def gen_basic_quadratic(n: int, p: int = 10, seed=0) -> DgpSample:
    if p < 1:
        raise ValueError("basic quadratic needs p >= 1")
    for attempt, rng in _draws(seed):
        X = rng.normal(0.0, np.sqrt(2.5), (n, p))
        T = rng.binomial(1, 0.5, n)
        if _balanced(T, n):
            break
    y0, y1 = basic_quadratic_outcomes(X)
    params = dict(name="basic_quadratic", n=n, p=p, seed=seed, attempt=attempt, noise_var=1.0, support=[0])
    return _finish(X, T, y0, y1, 1.0, rng, params)


GENERATORS = {
    "sine": gen_sine,
    "exponential": gen_exponential,
    "quadratic": gen_quadratic,
    "basic-quadratic": gen_basic_quadratic,
}


def generate(name: str, n: int, p: int, seed=0, **extra) -> DgpSample:
    key = name.replace("_", "-")
    if key not in GENERATORS:
        raise ValueError(f"unknown DGP {name!r}; choose from {sorted(GENERATORS)}")
    return GENERATORS[key](n, p, seed=seed, **extra)
