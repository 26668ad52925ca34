"""Named experiment recipes comparing matching methods on synthetic data.

Each recipe runs several method configurations over a list of seeds on a
synthetic generator and returns per-unit relative CATE errors plus extra
per-recipe diagnostics.  "Median error" everywhere means the median of the
per-unit relative errors pooled over all seeds.
"""

from __future__ import annotations

import hashlib
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import pandas as pd

from . import audit, dgp
from .estimate import RunConfig, crossfit_run

logger = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    name: str
    errors: pd.DataFrame  # seed, setting, method, unit, error
    summary: pd.DataFrame  # setting, method, median, q1, q3, n
    extras: dict = field(default_factory=dict)
    seconds: float = 0.0

    def median(self, method: str, setting=None) -> float:
        s = self.summary
        row = s[(s["method"] == method) & ((s["setting"] == setting) if setting is not None else True)]
        return float(row["median"].iloc[0])

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "seconds": self.seconds,
            "summary": self.summary.to_dict(orient="records"),
            "extras": _jsonable(self.extras),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _summarise(errors: pd.DataFrame) -> pd.DataFrame:
    g = errors.dropna(subset=["error"]).groupby(["setting", "method"], sort=False)["error"]
    return pd.DataFrame({
        "median": g.median(), "q1": g.quantile(0.25), "q3": g.quantile(0.75), "n": g.size(),
    }).reset_index()


def run_configs(sample: dgp.DgpSample, configs: dict, on_result: Optional[Callable] = None) -> list:
    """Run each labelled RunConfig on one sample; returns rows of per-unit errors.

    Oracle configs always take the sample's true support.
    """
    frames = []
    for label, cfg in configs.items():
        if cfg.method == "oracle":
            cfg = replace(cfg, oracle_support=sample.support)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = crossfit_run(sample.dataset, cfg)
        err = audit.cate_errors(res.estimates.cate, sample.true_cate, sample.true_ate)
        frames.append(pd.DataFrame({"method": label, "unit": np.arange(sample.dataset.n), "error": err["errors"]}))
        if on_result is not None:
            on_result(label, res, sample)
    return frames


def compare(name: str, gen: Callable, configs: dict, seeds, settings=None,
            on_result: Optional[Callable] = None) -> ExperimentResult:
    """Run ``configs`` for every seed and every generator setting.

    ``settings`` maps a setting label to generator kwargs; ``gen(seed=...,
    **kwargs)`` must return a DgpSample.
    """
    t0 = time.perf_counter()
    settings = settings or {"": {}}
    frames = []
    for setting, kwargs in settings.items():
        for seed in seeds:
            sample = gen(seed=seed, **kwargs)
            cfgs = {k: replace(c, seed=seed) for k, c in configs.items()}
            cb = (lambda label, res, smp, _s=setting, _seed=seed: on_result(_s, _seed, label, res, smp)) if on_result else None
            for df in run_configs(sample, cfgs, cb):
                df.insert(0, "setting", setting)
                df.insert(0, "seed", seed)
                frames.append(df)
            logger.info("%s: setting=%s seed=%s done", name, setting, seed)
    errors = pd.concat(frames, ignore_index=True)
    return ExperimentResult(name, errors, _summarise(errors), {}, time.perf_counter() - t0)


# -- recipes -------------------------------------------------------------------

def tree_vs_lcm(n=500, p=10, K=10, eta=5, seeds=range(10)) -> ExperimentResult:
    """Basic Quadratic: tree-importance metric versus the lasso metric."""
    weights = []

    def grab(setting, seed, label, res, sample):
        if label == "tree":
            w = np.mean([rec.metrics[0].weights for rec in res.folds], axis=0)
            weights.append(w)

    configs = {"lcm": RunConfig("lcm", K=K, eta=eta), "tree": RunConfig("tree", K=K, eta=eta)}
    out = compare("tree-vs-lcm", lambda seed: dgp.gen_basic_quadratic(n, p, seed), configs, list(seeds), on_result=grab)
    out.extras["tree_weight_x1"] = [float(w[0]) for w in weights]
    return out


def metalearner(n=500, p=10, K=10, eta=5, seeds=range(10)) -> ExperimentResult:
    """Sine: per-arm metrics versus one pooled metric; reports fold/seed-averaged weights."""
    w = {"lcm": [], "metalearner_arm0": [], "metalearner_arm1": []}

    def grab(setting, seed, label, res, sample):
        for rec in res.folds:
            if label == "lcm":
                w["lcm"].append(rec.metrics[0].weights)
            else:
                w["metalearner_arm0"].append(rec.metrics[0].weights)
                w["metalearner_arm1"].append(rec.metrics[1].weights)

    configs = {"lcm": RunConfig("lcm", K=K, eta=eta), "metalearner": RunConfig("metalearner", K=K, eta=eta)}
    out = compare("metalearner", lambda seed: dgp.gen_sine(n, p, seed), configs, list(seeds), on_result=grab)
    out.extras["mean_weights"] = {k: np.mean(v, axis=0).tolist() for k, v in w.items()}
    return out


def sine_vs_pgm(n=5000, p=100, K=10, eta=10, seeds=range(5)) -> ExperimentResult:
    """Sine and Exponential: lasso metric matching versus linear prognostic matching."""
    gens = {"sine": dgp.gen_sine, "exponential": dgp.gen_exponential}
    configs = {"lcm": RunConfig("lcm", K=K, eta=eta), "pgm_linear": RunConfig("pgm_linear", K=K, eta=eta)}
    return compare("sine-vs-pgm", lambda seed, name: gens[name](n, p, seed), configs, list(seeds),
                   settings={k: {"name": k} for k in gens})


def lap(n=5000, p=20, k=5, K1=25, K2=5, K_lcm=5, seeds=range(5), n_dispersion_cols=10) -> ExperimentResult:
    """Quadratic: two-stage LCM-augmented prognostic matching versus LCM.

    Single half/half split (fold 0 trains, fold 1 estimates), no cross-fitting.
    Dispersion is measured on the original covariate scale.
    """
    disp = {}

    def grab(setting, seed, label, res, sample):
        groups = audit.concat_groups([rec.groups for rec in res.folds])
        d, _ = audit.dispersion(groups, sample.dataset.X)
        disp.setdefault(label, []).append(d[:n_dispersion_cols])

    base = dict(eta=2, crossfit=False)
    configs = {
        "lcm": RunConfig("lcm", K=K_lcm, **base),
        "lap_linear": RunConfig("lap", K=K2, K1=K1, K2=K2, lap_prognostic="linear", **base),
        "lap_np": RunConfig("lap", K=K2, K1=K1, K2=K2, lap_prognostic="np", **base),
    }
    out = compare("lap", lambda seed: dgp.gen_quadratic(n, p, k, seed=seed), configs, list(seeds), on_result=grab)
    out.extras["dispersion"] = {m: np.mean(v, axis=0).tolist() for m, v in disp.items()}
    return out


def feature_select(n=5000, p=100, K=10, eta=5, seeds=range(5)) -> ExperimentResult:
    """LCM versus binarised lasso feature selection and the oracle support."""
    gens = {
        "sine": lambda seed: dgp.gen_sine(n, p, seed),
        "exponential": lambda seed: dgp.gen_exponential(n, p, seed),
        "quadratic": lambda seed: dgp.gen_quadratic(n, p, 5, seed=seed),
    }
    configs = {
        "lcm": RunConfig("lcm", K=K, eta=eta),
        "feature_select": RunConfig("feature_select", K=K, eta=eta),
        "oracle": RunConfig("oracle", K=K, eta=eta, oracle_support=[0]),  # replaced per sample
    }
    return compare("feature-select", lambda seed, name: gens[name](seed), configs, list(seeds),
                   settings={k: {"name": k} for k in gens})


def high_dim(n=2048, k=8, ps=(16, 64, 256, 1024), K=10, eta=2, seeds=range(5)) -> ExperimentResult:
    """Quadratic with ``k`` important covariates as irrelevant ones are added."""
    configs = {"lcm": RunConfig("lcm", K=K, eta=eta)}
    return compare("high-dim", lambda seed, p: dgp.gen_quadratic(n, p, k, seed=seed), configs, list(seeds),
                   settings={p: {"p": p} for p in ps})


def consistency(ns=(500, 1000, 2000, 4000), p=20, k=5, K=10, eta=5, seeds=range(10)) -> ExperimentResult:
    """Quadratic: error trend of LCM as the sample grows."""
    configs = {"lcm": RunConfig("lcm", K=K, eta=eta)}
    return compare("consistency", lambda seed, n: dgp.gen_quadratic(n, p, k, seed=seed), configs, list(seeds),
                   settings={n: {"n": n} for n in ns})


def scaling(ns=(256, 512, 1024, 2048, 4096, 8192), ps=(8, 16, 32, 64, 128, 256, 512, 1024), fixed_p=64,
            fixed_n=2048, k=8, methods=("lcm",), K=10, eta=2, repeats=1, seed=0, threads=1) -> pd.DataFrame:
    """Stage timings on Quadratic data: n grid at fixed p, then p grid at fixed n.

    ``cate_digest`` hashes the estimates so repeats can be checked for
    identical results.
    """
    rows = []
    grid = [(n, fixed_p) for n in ns] + [(fixed_n, p) for p in ps]
    for n, p in grid:
        sample = dgp.gen_quadratic(n, p, min(k, p), seed=seed)
        for method in methods:
            for r in range(repeats):
                cfg = RunConfig(method, K=K, eta=eta, seed=seed, oracle_support=sample.support, threads=threads)
                t0 = time.perf_counter()
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    res = crossfit_run(sample.dataset, cfg)
                total = time.perf_counter() - t0
                nnz = int(np.mean([len(rec.metrics[0].support) for rec in res.folds])) if res.folds[0].metrics else None
                rows.append(dict(method=method, n=n, p=p, repeat=r, total=total, nonzero_weights=nnz,
                                 cate_digest=hashlib.sha256(res.estimates.cate.tobytes()).hexdigest()[:16],
                                 **res.timings))
    return pd.DataFrame(rows)


PRESETS = {
    "tree-vs-lcm": tree_vs_lcm,
    "metalearner": metalearner,
    "sine-vs-pgm": sine_vs_pgm,
    "lap": lap,
    "feature-select": feature_select,
    "high-dim": high_dim,
    "consistency": consistency,
    "scaling": scaling,
}
