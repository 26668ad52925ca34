"""Diagonal distance metrics built from outcome-model variable importances."""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import lasso, trees

logger = logging.getLogger(__name__)

SOURCES = ("lcm", "metalearner_arm0", "metalearner_arm1", "tree", "feature_select", "oracle", "uniform")


class MetricWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DistanceMetric:
    """Nonnegative weights on the diagonal of a weighted-L1 distance."""

    weights: np.ndarray
    source: str
    provenance: dict = field(default_factory=dict)
    column_names: Optional[tuple] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1:
            raise ValueError("weights must be a vector")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("weights must be finite and nonnegative")
        if self.source not in SOURCES:
            raise ValueError(f"unknown metric source {self.source!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def p(self) -> int:
        return len(self.weights)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "weights": self.weights.tolist(),
            "fold": self.provenance.get("fold"),
            "column_names": list(self.column_names) if self.column_names else None,
            "provenance": {k: v for k, v in self.provenance.items() if k != "fold"},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistanceMetric":
        prov = dict(d.get("provenance") or {})
        prov["fold"] = d.get("fold")
        names = d.get("column_names")
        return cls(np.asarray(d["weights"]), d["source"], prov, tuple(names) if names else None)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.weights.tolist()).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class LassoConfig:
    k_folds: int = lasso.K_FOLDS
    n_lambdas: int = lasso.N_LAMBDAS
    eps_ratio: float = lasso.EPS_RATIO
    tol: float = lasso.TOL
    max_sweeps: int = lasso.MAX_SWEEPS


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = trees.MAX_DEPTH
    min_leaf: int = trees.MIN_LEAF


def uniform_metric(p: int, provenance: Optional[dict] = None) -> DistanceMetric:
    return DistanceMetric(np.full(p, 1.0 / p), "uniform", provenance or {})


def combine_importances(per_arm: Sequence[np.ndarray]) -> tuple:
    """Average the l1-normalised importance vectors of the arms that have any.

    Returns (weights, arms used).  An all-zero arm is skipped; the sum is
    divided by the number of arms used, so with both arms present this is the
    usual halving and the weights always sum to 1.
    """
    W = None
    used = []
    for arm, imp in enumerate(per_arm):
        imp = np.abs(np.asarray(imp, dtype=float))
        if W is None:
            W = np.zeros_like(imp)
        norm = imp.sum()
        if norm == 0:
            warnings.warn(f"arm {arm}: zero importance vector skipped", MetricWarning, stacklevel=3)
            continue
        W += imp / norm
        used.append(arm)
    if not used:
        return W, used
    return W / len(used), used


def fit_arm_lassos(X, T, Y, cfg: LassoConfig = LassoConfig(), seed=0) -> tuple:
    """Cross-validated lasso per treatment arm, fitted on that arm's rows only."""
    fits = []
    for arm in (0, 1):
        rows = np.flatnonzero(T == arm)
        if rows.size == 0:
            raise ValueError(f"arm {arm} is empty in the training rows")
        k = min(cfg.k_folds, rows.size)
        if k < 2:
            raise ValueError(f"arm {arm} has {rows.size} training row(s); need at least 2")
        fits.append(lasso.cv_lasso(X[rows], Y[rows], k_folds=k, n_lambdas=cfg.n_lambdas,
                                   seed=_arm_seed(seed, arm), eps_ratio=cfg.eps_ratio,
                                   tol=cfg.tol, max_sweeps=cfg.max_sweeps))
    return tuple(fits)


def _arm_seed(seed, arm):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, arm]).generate_state(1)[0]


def lcm_metric_from_coefs(betas: Sequence[np.ndarray], provenance: Optional[dict] = None) -> DistanceMetric:
    weights, used = combine_importances(betas)
    prov = dict(provenance or {})
    prov["arms_used"] = used
    if not used:
        warnings.warn("every arm's lasso shrank to zero: falling back to uniform weights",
                      MetricWarning, stacklevel=2)
        logger.info("lcm metric degenerate; uniform fallback")
        return uniform_metric(len(weights), prov)
    return DistanceMetric(weights, "lcm", prov)


def learn_lcm_metric(X, T, Y, cfg: LassoConfig = LassoConfig(), seed=0, fits=None,
                     provenance: Optional[dict] = None) -> DistanceMetric:
    """Lasso per arm, then average the l1-normalised |coefficients| across arms."""
    if fits is None:
        fits = fit_arm_lassos(X, T, Y, cfg, seed)
    prov = dict(provenance or {})
    prov["models"] = [f.summary() for f in fits]
    return lcm_metric_from_coefs([f.beta for f in fits], prov)


def metalearner_metrics_from_coefs(betas: Sequence[np.ndarray], provenance: Optional[dict] = None) -> tuple:
    out = []
    for arm, beta in enumerate(betas):
        prov = dict(provenance or {})
        prov["arm"] = arm
        a = np.abs(np.asarray(beta, dtype=float))
        if a.sum() == 0:
            warnings.warn(f"arm {arm}: lasso shrank to zero; uniform metric for this arm",
                          MetricWarning, stacklevel=2)
            out.append(uniform_metric(len(a), prov))
        else:
            out.append(DistanceMetric(a / a.sum(), f"metalearner_arm{arm}", prov))
    return tuple(out)


def learn_metalearner_metrics(X, T, Y, cfg: LassoConfig = LassoConfig(), seed=0, fits=None,
                              provenance: Optional[dict] = None) -> tuple:
    """One metric per arm: that arm's l1-normalised |coefficients|."""
    if fits is None:
        fits = fit_arm_lassos(X, T, Y, cfg, seed)
    prov = dict(provenance or {})
    prov["models"] = [f.summary() for f in fits]
    return metalearner_metrics_from_coefs([f.beta for f in fits], prov)


def learn_tree_metric(X, T, Y, cfg: TreeConfig = TreeConfig(), provenance: Optional[dict] = None) -> DistanceMetric:
    """Same averaging as the lasso metric, with per-arm tree importances."""
    imps = []
    for arm in (0, 1):
        rows = np.flatnonzero(T == arm)
        if rows.size == 0:
            raise ValueError(f"arm {arm} is empty in the training rows")
        imps.append(trees.tree_importance(trees.fit_tree(X[rows], Y[rows], cfg.max_depth, cfg.min_leaf)))
    weights, used = combine_importances(imps)
    prov = dict(provenance or {})
    prov.update(arms_used=used, max_depth=cfg.max_depth, min_leaf=cfg.min_leaf)
    if not used:
        warnings.warn("both arm trees are root-only: falling back to uniform weights",
                      MetricWarning, stacklevel=2)
        return uniform_metric(len(weights), prov)
    return DistanceMetric(weights, "tree", prov)


def feature_select_metric(m: DistanceMetric) -> DistanceMetric:
    """Unit weight on every covariate the input metric uses, zero elsewhere."""
    w = (m.weights > 0).astype(float)
    if not w.any():
        warnings.warn("feature selection of an all-zero metric", MetricWarning, stacklevel=2)
    prov = dict(m.provenance)
    prov["selected_from"] = m.source
    return DistanceMetric(w, "feature_select", prov, m.column_names)


def oracle_metric(support, p: int) -> DistanceMetric:
    support = sorted(set(int(j) for j in support))
    if not support:
        raise ValueError("oracle support must be nonempty")
    if support[0] < 0 or support[-1] >= p:
        raise ValueError(f"oracle support {support} outside 0..{p - 1}")
    w = np.zeros(p)
    w[support] = 1.0
    return DistanceMetric(w, "oracle", {"support": support})
