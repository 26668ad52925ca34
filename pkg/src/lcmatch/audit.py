"""Matched-group auditability diagnostics and CATE error summaries.

All covariate statistics are computed on whatever scale ``X`` is passed in;
callers pass the original (unstandardised) covariates.
"""

from __future__ import annotations

import warnings
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .matching import GroupSet

CHUNK_BYTES = 64 * 2**20


def concat_groups(parts: Sequence[GroupSet]) -> GroupSet:
    """Stack group sets (e.g. one per fold) into one; K is padded to the largest."""
    parts = list(parts)
    K = max(g.k_requested for g in parts)

    def pad(a, fill):
        if a.shape[1] == K:
            return a
        out = np.full((a.shape[0], K), fill, dtype=a.dtype)
        out[:, : a.shape[1]] = a
        return out

    nb = {a: np.vstack([pad(g.neighbors[a], -1) for g in parts]) for a in (0, 1)}
    ds = {a: np.vstack([pad(g.distances[a], np.nan) for g in parts]) for a in (0, 1)}
    return GroupSet(np.concatenate([g.queries for g in parts]), nb, ds, K)


def _members(groups: GroupSet, arm: Optional[int]) -> np.ndarray:
    arms = (0, 1) if arm is None else (arm,)
    return np.hstack([groups.neighbors[a] for a in arms])


def _chunks(m, width, p):
    step = max(1, CHUNK_BYTES // (8 * max(1, width * p)))
    for s in range(0, m, step):
        yield slice(s, min(s + step, m))


def tightness(groups: GroupSet, X: np.ndarray, arm: Optional[int] = None) -> tuple:
    """Per covariate: mean over groups of the mean |x_query - x_neighbour|.

    For 0/1 columns this is the fraction of neighbours whose value differs
    from the query's (mismatch rate).  Groups with no neighbours are skipped.
    Returns (values of length p, number of empty groups skipped).
    """
    X = np.asarray(X, dtype=float)
    nb = _members(groups, arm)
    valid = nb >= 0
    cnt = valid.sum(axis=1)
    keep = cnt > 0
    total = np.zeros(X.shape[1])
    for sl in _chunks(len(nb), nb.shape[1], X.shape[1]):
        v = valid[sl]
        diff = np.abs(X[groups.queries[sl]][:, None, :] - X[np.maximum(nb[sl], 0)])
        diff[~v] = 0.0
        per_group = diff.sum(axis=1)
        k = keep[sl]
        total += (per_group[k] / cnt[sl][k, None]).sum(axis=0)
    n_keep = int(keep.sum())
    if n_keep == 0:
        return np.full(X.shape[1], np.nan), int((~keep).sum())
    return total / n_keep, int((~keep).sum())


def dispersion(groups: GroupSet, X: np.ndarray, arm: Optional[int] = None) -> tuple:
    """Per covariate: mean over groups of the sample sd of query + neighbours.

    Groups with fewer than two members in total are skipped.  Returns
    (values of length p, number of groups skipped).
    """
    X = np.asarray(X, dtype=float)
    nb = np.hstack([groups.queries[:, None], _members(groups, arm)])
    valid = nb >= 0
    cnt = valid.sum(axis=1)
    keep = cnt >= 2
    total = np.zeros(X.shape[1])
    for sl in _chunks(len(nb), nb.shape[1], X.shape[1]):
        v = valid[sl][..., None]
        vals = X[np.maximum(nb[sl], 0)]
        c = cnt[sl][:, None]
        mean = np.where(v, vals, 0.0).sum(axis=1) / c
        ss = np.where(v, (vals - mean[:, None, :]) ** 2, 0.0).sum(axis=1)
        k = keep[sl]
        total += np.sqrt(ss[k] / (c[k] - 1)).sum(axis=0)
    n_keep = int(keep.sum())
    if n_keep == 0:
        return np.full(X.shape[1], np.nan), int((~keep).sum())
    return total / n_keep, int((~keep).sum())


def random_groups(queries, pool, size: int, seed=0) -> GroupSet:
    """Groups of ``size`` random pool members per query, a dispersion baseline.

    Members go in the arm-0 slot; arm 1 is left empty.
    """
    rng = np.random.default_rng(seed)
    queries = np.asarray(queries)
    pool = np.asarray(pool)
    nb = np.stack([rng.choice(pool, size, replace=False) for _ in queries]) if len(queries) else np.empty((0, size), int)
    empty = np.full((len(queries), size), -1)
    return GroupSet(queries, {0: nb, 1: empty}, {0: np.zeros(nb.shape), 1: np.full(nb.shape, np.nan)}, size)


def audit_report(groups: GroupSet, X: np.ndarray, column_names=None, kinds=None,
                 method: str = "", arm: Optional[int] = None) -> pd.DataFrame:
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    names = list(column_names) if column_names is not None else [f"X{j + 1}" for j in range(p)]
    if kinds is None:
        kinds = ["binary" if np.isin(X[:, j], (0.0, 1.0)).all() else "continuous" for j in range(p)]
    tight, n_empty = tightness(groups, X, arm)
    disp, n_single = dispersion(groups, X, arm)
    binary = np.array([k == "binary" for k in kinds])
    df = pd.DataFrame({
        "column": names,
        "kind": list(kinds),
        "tightness": np.where(binary, np.nan, tight),
        "mismatch_rate": np.where(binary, tight, np.nan),
        "dispersion": disp,
    })
    df["method"] = method
    df["group_size"] = groups.k_requested
    df.attrs.update(empty_groups=n_empty, singleton_groups=n_single)
    return df


def cate_errors(cate, true_cate, true_ate: float) -> dict:
    """Relative errors |cate - truth| / |ATE| with summary quantiles.

    Units without an estimate are excluded (and counted).  If the true ATE is
    zero the errors are left unnormalised and ``normalized`` is False.
    """
    cate = np.asarray(cate, dtype=float)
    true_cate = np.asarray(true_cate, dtype=float)
    ok = np.isfinite(cate)
    err = np.abs(cate - true_cate)
    normalized = true_ate != 0
    if normalized:
        err = err / abs(true_ate)
    else:
        warnings.warn("true ATE is zero: reporting unnormalised absolute CATE errors", stacklevel=2)
    e = err[ok]
    q1, med, q3 = np.percentile(e, [25, 50, 75]) if e.size else (np.nan,) * 3
    return {
        "errors": np.where(ok, err, np.nan),
        "median": float(med), "q1": float(q1), "q3": float(q3),
        "mean": float(e.mean()) if e.size else float("nan"),
        "n": int(ok.sum()), "n_excluded": int((~ok).sum()),
        "normalized": bool(normalized),
    }
