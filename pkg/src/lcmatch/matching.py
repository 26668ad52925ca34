"""Exact K-nearest-neighbour matched groups, with replacement.

Candidate pools are per treatment arm and always exclude the query unit.
Neighbours are ordered by distance, ties by ascending unit index.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from .metric import DistanceMetric

CHUNK_BYTES = 64 * 2**20
K1_DEFAULT = 25
K2_DEFAULT = 5


def weighted_l1_distance(weights, x1, x2) -> float:
    w = np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    return float(np.sum(w * np.abs(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float))))


def active_columns(weights) -> np.ndarray:
    return np.flatnonzero(np.asarray(weights) > 0)


def weighted_coordinates(X: np.ndarray, weights) -> tuple:
    """Columns of ``X`` with positive weight, and those weights.

    Zero-weight columns are dropped, so the matching cost scales with the
    number of covariates the metric actually uses.  Distances are taken as
    sum_l w_l |x_l - x'_l| on these columns (not on pre-scaled coordinates)
    so that tied distances stay exactly tied.
    """
    act = active_columns(weights)
    return X[:, act], np.asarray(weights, dtype=float)[act]


@dataclass(frozen=True)
class MatchedGroup:
    query: int
    neighbors_t0: np.ndarray
    neighbors_t1: np.ndarray
    distances_t0: np.ndarray
    distances_t1: np.ndarray
    k_requested: int

    @property
    def k_effective_t0(self) -> int:
        return len(self.neighbors_t0)

    @property
    def k_effective_t1(self) -> int:
        return len(self.neighbors_t1)

    def neighbors(self, arm: int) -> np.ndarray:
        return self.neighbors_t1 if arm else self.neighbors_t0

    def distances(self, arm: int) -> np.ndarray:
        return self.distances_t1 if arm else self.distances_t0


class GroupSet(Sequence):
    """Matched groups for a batch of queries, stored as padded arrays.

    ``neighbors[arm]`` is (m, K) with -1 padding where an arm has fewer than K
    candidates; ``distances[arm]`` is padded with NaN.  Indexing yields
    :class:`MatchedGroup` objects.
    """

    def __init__(self, queries, neighbors: dict, distances: dict, k_requested: int):
        self.queries = np.asarray(queries, dtype=np.int64)
        self.neighbors = {a: np.asarray(neighbors[a], dtype=np.int64) for a in (0, 1)}
        self.distances = {a: np.asarray(distances[a], dtype=float) for a in (0, 1)}
        self.k_requested = int(k_requested)

    def __len__(self) -> int:
        return len(self.queries)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        nb, ds = {}, {}
        for a in (0, 1):
            keep = self.neighbors[a][i] >= 0
            nb[a] = self.neighbors[a][i][keep]
            ds[a] = self.distances[a][i][keep]
        return MatchedGroup(int(self.queries[i]), nb[0], nb[1], ds[0], ds[1], self.k_requested)

    def __iter__(self) -> Iterator[MatchedGroup]:
        for i in range(len(self)):
            yield self[i]

    def k_effective(self, arm: int) -> np.ndarray:
        return (self.neighbors[arm] >= 0).sum(axis=1)

    def same_as(self, other: "GroupSet") -> bool:
        return (
            np.array_equal(self.queries, other.queries)
            and all(np.array_equal(self.neighbors[a], other.neighbors[a]) for a in (0, 1))
        )

    def to_frame(self, fold: Optional[int] = None) -> pd.DataFrame:
        frames = []
        for a in (0, 1):
            nb, ds = self.neighbors[a], self.distances[a]
            m, k = nb.shape
            q = np.repeat(self.queries, k)
            rank = np.tile(np.arange(k), m)
            keep = nb.ravel() >= 0
            frames.append(pd.DataFrame({
                "query": q[keep], "arm": a, "rank": rank[keep],
                "neighbor": nb.ravel()[keep], "distance": ds.ravel()[keep],
            }))
        df = pd.concat(frames, ignore_index=True)
        if fold is not None:
            df.insert(0, "fold", fold)
        return df.sort_values(["query", "arm", "rank"], kind="stable", ignore_index=True)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, k_requested: Optional[int] = None) -> "GroupSet":
        queries = np.unique(df["query"].to_numpy())
        pos = {q: i for i, q in enumerate(queries)}
        k = int(k_requested or (df["rank"].max() + 1 if len(df) else 0))
        nb = {a: np.full((len(queries), k), -1, dtype=np.int64) for a in (0, 1)}
        ds = {a: np.full((len(queries), k), np.nan) for a in (0, 1)}
        for q, a, r, n_, d in df[["query", "arm", "rank", "neighbor", "distance"]].itertuples(index=False):
            nb[int(a)][pos[q], int(r)] = int(n_)
            ds[int(a)][pos[q], int(r)] = float(d)
        return cls(queries, nb, ds, k)

    def to_json(self) -> list:
        return [
            {
                "query": g.query,
                "k_requested": g.k_requested,
                "neighbors_t0": g.neighbors_t0.tolist(), "distances_t0": g.distances_t0.tolist(),
                "neighbors_t1": g.neighbors_t1.tolist(), "distances_t1": g.distances_t1.tolist(),
            }
            for g in self
        ]


def _select(D: np.ndarray, K: int) -> tuple:
    """K smallest per row, ties by column position; inf entries become padding."""
    order = np.argsort(D, axis=1, kind="stable")[:, :K]
    d = np.take_along_axis(D, order, axis=1)
    bad = ~np.isfinite(d)
    order[bad] = -1
    d[bad] = np.nan
    return order, d


def _knn(Zq, q_ids, Zc, c_ids, K, metric, threads=1, w=None):
    """Neighbour ids/distances of each query row among candidate rows.

    ``c_ids`` must be ascending so that column position order equals unit
    index order.  A candidate with the same id as the query is excluded.
    ``w`` weights the coordinates of a cityblock distance.
    """
    m, nc = len(q_ids), len(c_ids)
    K_eff = min(K, nc)
    out_ids = np.full((m, K), -1, dtype=np.int64)
    out_d = np.full((m, K), np.nan)
    if m == 0 or nc == 0 or K_eff == 0:
        return out_ids, out_d
    step = max(1, CHUNK_BYTES // (8 * nc))
    chunks = [slice(s, min(s + step, m)) for s in range(0, m, step)]

    def run(sl):
        if Zq.shape[1] == 0:
            D = np.zeros((sl.stop - sl.start, nc))
        else:
            D = cdist(Zq[sl], Zc, metric=metric) if w is None else cdist(Zq[sl], Zc, metric=metric, w=w)
        qpos = np.searchsorted(c_ids, q_ids[sl])
        hit = (qpos < nc) & (c_ids[np.minimum(qpos, nc - 1)] == q_ids[sl])
        D[np.flatnonzero(hit), qpos[hit]] = np.inf
        order, d = _select(D, K_eff)
        ids = np.where(order >= 0, c_ids[np.maximum(order, 0)], -1)
        return sl, ids, d

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(sl) for sl in chunks]
    for sl, ids, d in results:
        out_ids[sl, :K_eff] = ids
        out_d[sl, :K_eff] = d
    return out_ids, out_d


def _rows(n, rows):
    return np.arange(n) if rows is None else np.sort(np.asarray(rows, dtype=np.int64))


def knn(query: int, arm: int, X: np.ndarray, T: np.ndarray, K: int, candidates=None,
        weights=None) -> tuple:
    """Single-query KNN among ``candidates`` with treatment ``arm``.

    Weighted L1 when ``weights`` is given, Euclidean otherwise.  Returns
    (neighbour ids, distances); fewer than ``K`` when the pool is short.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    pool = _rows(len(T), candidates)
    pool = pool[T[pool] == arm]
    X = np.asarray(X, dtype=float)
    if weights is None:
        ids, d = _knn(X[[query]], np.array([query]), X[pool], pool, K, "euclidean")
    else:
        Z, w = weighted_coordinates(X, weights)
        ids, d = _knn(Z[[query]], np.array([query]), Z[pool], pool, K, "cityblock", w=w)
    keep = ids[0] >= 0
    return ids[0][keep], d[0][keep]


MetricArg = Union[DistanceMetric, Sequence[DistanceMetric]]


def _per_arm(metric: MetricArg) -> tuple:
    if isinstance(metric, DistanceMetric):
        return metric, metric
    m0, m1 = metric
    return m0, m1


def match_groups(X: np.ndarray, T: np.ndarray, metric: MetricArg, K: int, rows=None,
                 threads: int = 1) -> GroupSet:
    """Weighted-L1 matched groups for every unit in ``rows`` (pool = ``rows``).

    ``metric`` is one DistanceMetric, or a pair (arm-0 metric, arm-1 metric)
    in which case arm-t neighbours are ranked under metric t.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    T = np.asarray(T)
    rows = _rows(len(T), rows)
    nb, ds = {}, {}
    for arm, m in enumerate(_per_arm(metric)):
        Z, w = weighted_coordinates(X, m.weights)
        pool = rows[T[rows] == arm]
        nb[arm], ds[arm] = _knn(Z[rows], rows, Z[pool], pool, K, "cityblock", threads, w)
    return GroupSet(rows, nb, ds, K)


def prognostic_match(scores: np.ndarray, T: np.ndarray, K: int, rows=None, threads: int = 1) -> GroupSet:
    """Euclidean KNN in prognostic-score space (columns f0(x), f1(x))."""
    if K < 1:
        raise ValueError("K must be at least 1")
    T = np.asarray(T)
    S = np.asarray(scores, dtype=float)
    rows = _rows(len(T), rows)
    nb, ds = {}, {}
    for arm in (0, 1):
        pool = rows[T[rows] == arm]
        nb[arm], ds[arm] = _knn(S[rows], rows, S[pool], pool, K, "euclidean", threads)
    return GroupSet(rows, nb, ds, K)


def lap_match(scores: np.ndarray, X: np.ndarray, T: np.ndarray, metric: DistanceMetric,
              K1: int = K1_DEFAULT, K2: int = K2_DEFAULT, rows=None, threads: int = 1) -> GroupSet:
    """Two-stage matching: K1 prognostic-score neighbours, then the K2 of those
    closest under the weighted-L1 metric (ties by unit index)."""
    if not 1 <= K2 <= K1:
        raise ValueError("need 1 <= K2 <= K1")
    coarse = prognostic_match(scores, T, K1, rows, threads)
    Z, w = weighted_coordinates(X, metric.weights)
    nb, ds = {}, {}
    for arm in (0, 1):
        cand = coarse.neighbors[arm]
        pad = cand < 0
        # unit-index order first so the stable distance sort breaks ties by index
        by_id = np.argsort(np.where(pad, np.iinfo(np.int64).max, cand), axis=1, kind="stable")
        cand = np.take_along_axis(cand, by_id, axis=1)
        pad = cand < 0
        safe = np.where(pad, 0, cand)
        D = np.empty(cand.shape)
        step = max(1, CHUNK_BYTES // (8 * max(1, cand.shape[1] * Z.shape[1])))
        for s in range(0, len(cand), step):
            sl = slice(s, s + step)
            D[sl] = (np.abs(Z[coarse.queries[sl]][:, None, :] - Z[safe[sl]]) * w).sum(axis=2)
        D[pad] = np.inf
        order, d = _select(D, K2)
        ids = np.where(order >= 0, np.take_along_axis(cand, np.maximum(order, 0), axis=1), -1)
        nb[arm], ds[arm] = ids, d
    return GroupSet(coarse.queries, nb, ds, K2)
