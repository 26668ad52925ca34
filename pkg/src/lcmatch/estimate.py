"""Potential-outcome / CATE estimation from matched groups, and honest cross-fitting."""

from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from . import matching, metric as metric_mod, trees
from .dataset import Dataset, make_folds, standardize
from .matching import GroupSet, MatchedGroup
from .metric import DistanceMetric, LassoConfig, TreeConfig

logger = logging.getLogger(__name__)

METHODS = ("lcm", "metalearner", "tree", "pgm_linear", "pgm_np", "lap", "feature_select", "oracle", "uniform")
ESTIMATORS = ("mean", "linear")
RIDGE = 1e-8
MAX_FOLD_DRAWS = 10


class EstimationError(RuntimeError):
    pass


class FoldError(RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold


# -- per-group estimators -----------------------------------------------------

def estimate_po_mean(group: MatchedGroup, Y) -> tuple:
    """Mean neighbour outcome per arm; ``None`` for an arm with no neighbours."""
    Y = np.asarray(Y)
    out = []
    for arm in (0, 1):
        nb = group.neighbors(arm)
        out.append(float(Y[nb].mean()) if len(nb) else None)
    return tuple(out)


def _ols_predict(Xn, yn, xq):
    D = np.column_stack([np.ones(len(yn)), Xn])
    A = D.T @ D + RIDGE * np.eye(D.shape[1])
    if np.linalg.cond(A) > 1e12:
        raise np.linalg.LinAlgError("singular design")
    coef = np.linalg.solve(A, D.T @ yn)
    return float(coef[0] + xq @ coef[1:])


def estimate_po_linear(group: MatchedGroup, X, Y, columns=None) -> tuple:
    """Per-arm least squares on the group's neighbours, evaluated at the query.

    Regressors are ``columns`` (default: all).  An arm with fewer than
    ``len(columns) + 2`` neighbours, or a singular design, falls back to the
    neighbour mean.  Returns (yhat0, yhat1, fallback_flags).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    cols_per_arm = columns if isinstance(columns, tuple) else (columns, columns)
    est, flags = [], []
    for arm in (0, 1):
        cols = cols_per_arm[arm]
        cols = np.arange(X.shape[1]) if cols is None else np.asarray(cols, dtype=np.int64)
        nb = group.neighbors(arm)
        if len(nb) == 0:
            est.append(None)
            flags.append(False)
            continue
        if len(nb) < len(cols) + 2:
            est.append(float(Y[nb].mean()))
            flags.append(True)
            continue
        try:
            est.append(_ols_predict(X[np.ix_(nb, cols)], Y[nb], X[group.query, cols]))
            flags.append(False)
        except np.linalg.LinAlgError:
            est.append(float(Y[nb].mean()))
            flags.append(True)
    return est[0], est[1], tuple(flags)


def po_mean(groups: GroupSet, Y) -> tuple:
    """Vectorised :func:`estimate_po_mean`; NaN marks an empty arm."""
    Y = np.asarray(Y, dtype=float)
    out = []
    for arm in (0, 1):
        nb = groups.neighbors[arm]
        valid = nb >= 0
        vals = np.where(valid, Y[np.maximum(nb, 0)], 0.0)
        cnt = valid.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out.append(np.where(cnt > 0, vals.sum(axis=1) / cnt, np.nan))
    return out[0], out[1]


def po_linear(groups: GroupSet, X, Y, columns=None) -> tuple:
    y0 = np.full(len(groups), np.nan)
    y1 = np.full(len(groups), np.nan)
    n_fallback = 0
    for i, g in enumerate(groups):
        a, b, flags = estimate_po_linear(g, X, Y, columns)
        y0[i] = np.nan if a is None else a
        y1[i] = np.nan if b is None else b
        n_fallback += sum(flags)
    return y0, y1, n_fallback


# -- results -------------------------------------------------------------------

@dataclass
class CateEstimates:
    yhat0: np.ndarray
    yhat1: np.ndarray
    n_contributions: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def cate(self) -> np.ndarray:
        return self.yhat1 - self.yhat0

    @property
    def n(self) -> int:
        return len(self.yhat0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "unit": np.arange(self.n), "yhat0": self.yhat0, "yhat1": self.yhat1,
            "cate": self.cate, "n_contributions": self.n_contributions,
        })

    @classmethod
    def from_frame(cls, df: pd.DataFrame, meta: Optional[dict] = None) -> "CateEstimates":
        df = df.sort_values("unit")
        return cls(df["yhat0"].to_numpy(float), df["yhat1"].to_numpy(float),
                   df["n_contributions"].to_numpy(int), meta or {})


def ate(estimates: CateEstimates) -> tuple:
    """Mean CATE over estimable units; returns (ate, number of units excluded)."""
    cate = estimates.cate if isinstance(estimates, CateEstimates) else np.asarray(estimates, dtype=float)
    ok = np.isfinite(cate)
    if not ok.any():
        raise EstimationError("no unit has a CATE estimate")
    return float(cate[ok].mean()), int((~ok).sum())


# -- cross-fitting -------------------------------------------------------------

@dataclass
class RunConfig:
    method: str = "lcm"
    K: int = 10
    eta: int = 5
    seed: int = 0
    estimator: str = "mean"
    repeats: int = 1
    crossfit: bool = True
    K1: int = matching.K1_DEFAULT
    K2: int = matching.K2_DEFAULT
    lap_prognostic: str = "linear"
    oracle_support: Optional[list] = None
    lasso: LassoConfig = field(default_factory=LassoConfig)
    tree: TreeConfig = field(default_factory=TreeConfig)
    gbm_trees: int = trees.GBM_TREES
    gbm_rate: float = trees.GBM_RATE
    gbm_depth: int = trees.MAX_DEPTH
    gbm_min_leaf: int = trees.MIN_LEAF
    threads: int = 1
    keep_groups: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.eta < 2:
            raise ValueError("eta must be at least 2")
        if self.lap_prognostic not in ("linear", "np"):
            raise ValueError("lap_prognostic must be 'linear' or 'np'")
        if self.method == "oracle" and not self.oracle_support:
            raise ValueError("oracle method needs oracle_support")
        if isinstance(self.lasso, dict):
            self.lasso = LassoConfig(**self.lasso)
        if isinstance(self.tree, dict):
            self.tree = TreeConfig(**self.tree)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FoldRecord:
    fold: int
    repeat: int
    train_rows: np.ndarray
    est_rows: np.ndarray
    metrics: list
    models: list
    groups: Optional[GroupSet]
    timings: dict


@dataclass
class RunResult:
    estimates: CateEstimates
    folds: list
    config: RunConfig
    timings: dict

    def fold_assignments(self) -> list:
        out = []
        for rec in self.folds:
            out.append({"repeat": rec.repeat, "fold": rec.fold, "train_rows": rec.train_rows.tolist()})
        return out


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def _plan(data: Dataset, cfg: RunConfig, repeat: int):
    """Fold plan whose training fold(s) contain at least two units of each arm."""
    for attempt in range(MAX_FOLD_DRAWS):
        plan = make_folds(data.n, cfg.eta, _seed(cfg.seed, repeat, attempt))
        folds = range(cfg.eta) if cfg.crossfit else [0]
        ok = all(np.bincount(data.T[plan.rows(f)], minlength=2).min() >= 2 for f in folds)
        if ok:
            return plan
    raise EstimationError(f"could not draw folds with both arms in every training fold after {MAX_FOLD_DRAWS} tries")


def _learn_and_match(cfg: RunConfig, Xs, T, Y, train, est, seed):
    """Fit the method's metric/models on ``train`` and build groups over ``est``."""
    Xt, Tt, Yt = Xs[train], T[train], Y[train]
    p = Xs.shape[1]
    metrics, models = [], []
    scores = None
    columns = None
    t0 = time.perf_counter()
    m = cfg.method
    fits = None
    if m in ("lcm", "metalearner", "feature_select", "pgm_linear") or (m == "lap"):
        fits = metric_mod.fit_arm_lassos(Xt, Tt, Yt, cfg.lasso, seed)
        models = [dict(kind="lasso", arm=a, **f.summary()) for a, f in enumerate(fits)]
    if m in ("lcm", "feature_select", "lap"):
        lcm = metric_mod.learn_lcm_metric(Xt, Tt, Yt, fits=fits)
        metrics = [metric_mod.feature_select_metric(lcm) if m == "feature_select" else lcm]
    elif m == "metalearner":
        metrics = list(metric_mod.learn_metalearner_metrics(Xt, Tt, Yt, fits=fits))
    elif m == "tree":
        metrics = [metric_mod.learn_tree_metric(Xt, Tt, Yt, cfg.tree)]
    elif m == "oracle":
        metrics = [metric_mod.oracle_metric(cfg.oracle_support, p)]
    elif m == "uniform":
        metrics = [metric_mod.uniform_metric(p)]

    if m == "pgm_linear" or (m == "lap" and cfg.lap_prognostic == "linear"):
        scores = np.column_stack([f.predict(Xs) for f in fits])
    elif m == "pgm_np" or (m == "lap" and cfg.lap_prognostic == "np"):
        gbms = []
        for arm in (0, 1):
            rows = Tt == arm
            gbms.append(trees.fit_gbm(Xt[rows], Yt[rows], cfg.gbm_trees, cfg.gbm_rate,
                                      cfg.gbm_depth, cfg.gbm_min_leaf))
        models += [dict(kind="gbm", arm=a, **g.config) for a, g in enumerate(gbms)]
        scores = np.column_stack([g.predict(Xs) for g in gbms])
    t_learn = time.perf_counter() - t0

    t0 = time.perf_counter()
    if m in ("pgm_linear", "pgm_np"):
        groups = matching.prognostic_match(scores, T, cfg.K, est)
    elif m == "lap":
        groups = matching.lap_match(scores, Xs, T, metrics[0], cfg.K1, cfg.K2, est)
    elif m == "metalearner":
        groups = matching.match_groups(Xs, T, tuple(metrics), cfg.K, est)
        columns = tuple(mt.support for mt in metrics)
    else:
        groups = matching.match_groups(Xs, T, metrics[0], cfg.K, est)
    if columns is None and metrics:
        columns = metrics[0].support
    t_match = time.perf_counter() - t0
    return metrics, models, groups, columns, t_learn, t_match


def crossfit_run(data: Dataset, config: RunConfig) -> RunResult:
    """Honest eta-fold cross-fitting.

    For each fold f: standardise on fold f, learn the metric/models on fold f,
    match and estimate on every other fold.  Each unit collects eta-1
    estimates per repeat; the reported values are their arithmetic mean.  With
    ``crossfit=False`` only fold 0 trains and its units stay unestimated.
    """
    cfg = config
    data.check_arms()
    n = data.n
    X, T, Y = data.X, data.T, data.Y
    jobs = []
    for r in range(cfg.repeats):
        plan = _plan(data, cfg, r)
        for f in (range(cfg.eta) if cfg.crossfit else [0]):
            jobs.append((r, f, plan.rows(f), plan.complement(f)))

    def run(job):
        r, f, train, est = job
        try:
            if np.bincount(T[est], minlength=2).min() == 0:
                raise EstimationError("an arm is empty in the estimation split")
            Xs, _ = standardize(X, train)
            metrics, models, groups, cols, t_learn, t_match = _learn_and_match(
                cfg, Xs, T, Y, train, est, _seed(cfg.seed, r, f, 7))
            t0 = time.perf_counter()
            n_fallback = 0
            if cfg.estimator == "linear":
                y0, y1, n_fallback = po_linear(groups, Xs, Y, cols)
            else:
                y0, y1 = po_mean(groups, Y)
            t_est = time.perf_counter() - t0
        except Exception as exc:
            raise FoldError(f, exc) from exc
        for mt in metrics:
            mt.provenance.update(fold=f, repeat=r)
        rec = FoldRecord(f, r, train, est, metrics, models, groups if cfg.keep_groups else None,
                         {"learn": t_learn, "match": t_match, "estimate": t_est, "linear_fallbacks": n_fallback})
        return rec, y0, y1

    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    sum0 = np.zeros(n)
    sum1 = np.zeros(n)
    cnt0 = np.zeros(n, dtype=np.int64)
    cnt1 = np.zeros(n, dtype=np.int64)
    contrib = np.zeros(n, dtype=np.int64)
    records = []
    timings = {"learn": 0.0, "match": 0.0, "estimate": 0.0}
    for rec, y0, y1 in results:
        q = rec.groups.queries if rec.groups is not None else np.sort(rec.est_rows)
        ok0, ok1 = np.isfinite(y0), np.isfinite(y1)
        np.add.at(sum0, q[ok0], y0[ok0])
        np.add.at(sum1, q[ok1], y1[ok1])
        np.add.at(cnt0, q[ok0], 1)
        np.add.at(cnt1, q[ok1], 1)
        np.add.at(contrib, q, 1)
        for k in timings:
            timings[k] += rec.timings[k]
        records.append(rec)
    with np.errstate(invalid="ignore", divide="ignore"):
        yhat0 = np.where(cnt0 > 0, sum0 / np.maximum(cnt0, 1), np.nan)
        yhat1 = np.where(cnt1 > 0, sum1 / np.maximum(cnt1, 1), np.nan)
    missing = int((~np.isfinite(yhat1 - yhat0) & (contrib > 0)).sum())
    if missing:
        warnings.warn(f"{missing} estimated unit(s) lack one potential outcome", stacklevel=2)
    meta = {
        "method": cfg.method, "K": cfg.K, "eta": cfg.eta, "seed": cfg.seed,
        "estimator": cfg.estimator, "repeats": cfg.repeats, "crossfit": cfg.crossfit,
        "combine": "arithmetic mean of per-fold estimates",
        "units_missing_side": missing,
    }
    return RunResult(CateEstimates(yhat0, yhat1, contrib, meta), records, cfg, timings)
