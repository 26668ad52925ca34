"""Regression trees (CART, squared error) and least-squares gradient boosting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_DEPTH = 3
MIN_LEAF = 5
GBM_TREES = 100
GBM_RATE = 0.1

_LEAF = -1


@dataclass(frozen=True)
class TreeModel:
    """Flat node arrays; ``feature == -1`` marks a leaf.

    ``impurity_decrease`` holds the drop in within-node sum of squares
    (node SSE minus children SSE) for internal nodes, 0 for leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    impurity_decrease: np.ndarray
    n_samples: np.ndarray
    n_features: int
    max_depth: int
    min_leaf: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaves(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat != _LEAF
            if not inner.any():
                return node
            r, nd = rows[inner], node[inner]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaves(X)]


def _best_split(x_cols, y, min_leaf):
    """Return (gain, column, threshold) of the best split, or None.

    Columns are scanned in index order and thresholds in increasing order;
    only a strictly larger gain replaces the incumbent.
    """
    n = len(y)
    yc = y - y.mean()
    sse = float(yc @ yc)
    best = None
    if sse <= 0.0:
        return None
    min_gain = sse * 1e-10
    positions = np.arange(min_leaf, n - min_leaf + 1)
    if positions.size == 0:
        return None
    for j in range(x_cols.shape[1]):
        order = np.argsort(x_cols[:, j], kind="stable")
        xs = x_cols[order, j]
        ys = yc[order]
        csum = np.cumsum(ys)
        csum2 = np.cumsum(ys * ys)
        i = positions
        valid = xs[i - 1] < xs[i]
        if not valid.any():
            continue
        left_sum, left_sq = csum[i - 1], csum2[i - 1]
        right_sum, right_sq = csum[-1] - left_sum, csum2[-1] - left_sq
        n_left = i.astype(float)
        n_right = n - n_left
        gain = sse - (left_sq - left_sum ** 2 / n_left) - (right_sq - right_sum ** 2 / n_right)
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > min_gain and (best is None or gain[k] > best[0]):
            pos = i[k]
            lo, hi = xs[pos - 1], xs[pos]
            thr = 0.5 * (lo + hi)
            if not lo <= thr < hi:
                thr = lo
            best = (float(gain[k]), j, float(thr))
    return best


def fit_tree(X, y, max_depth: int = MAX_DEPTH, min_leaf: int = MIN_LEAF) -> TreeModel:
    """Greedy depth-first CART on squared error.

    Ties between candidate splits go to the lowest column, then lowest
    threshold.  A node is split only if the variance reduction is positive and
    both children keep at least ``min_leaf`` rows.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if min_leaf < 1:
        raise ValueError("min_leaf must be at least 1")
    if n == 0:
        raise ValueError("cannot fit a tree on zero rows")

    feature, threshold, left, right, value, decrease, counts = [], [], [], [], [], [], []

    def new_node(rows):
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        value.append(float(y[rows].mean()))
        decrease.append(0.0)
        counts.append(len(rows))
        return len(feature) - 1

    def grow(rows, depth):
        node = new_node(rows)
        if depth >= max_depth or len(rows) < 2 * min_leaf:
            return node
        split = _best_split(X[rows], y[rows], min_leaf)
        if split is None:
            return node
        gain, j, thr = split
        mask = X[rows, j] <= thr
        feature[node] = j
        threshold[node] = thr
        decrease[node] = gain
        left[node] = grow(rows[mask], depth + 1)
        right[node] = grow(rows[~mask], depth + 1)
        return node

    grow(np.arange(n), 0)
    return TreeModel(
        np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64), np.array(value), np.array(decrease),
        np.array(counts, dtype=np.int64), p, max_depth, min_leaf,
    )


def predict_tree(model: TreeModel, x) -> float:
    return float(model.predict(np.asarray(x, dtype=float).reshape(1, -1))[0])


def tree_importance(model: TreeModel) -> np.ndarray:
    """Normalised total variance reduction per column (zeros for a stump-less tree)."""
    imp = np.zeros(model.n_features)
    inner = model.feature != _LEAF
    np.add.at(imp, model.feature[inner], model.impurity_decrease[inner])
    total = imp.sum()
    return imp / total if total > 0 else imp


@dataclass(frozen=True)
class BoostedModel:
    trees: tuple
    learning_rate: float
    init: float
    config: dict = field(default_factory=dict)

    def staged_predict(self, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        pred = np.full(X.shape[0], self.init)
        yield pred.copy()
        for tree in self.trees:
            pred += self.learning_rate * tree.predict(X)
            yield pred.copy()

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        pred = np.full(X.shape[0], self.init)
        for tree in self.trees:
            pred += self.learning_rate * tree.predict(X)
        return pred


def fit_gbm(X, y, n_trees: int = GBM_TREES, learning_rate: float = GBM_RATE,
            max_depth: int = MAX_DEPTH, min_leaf: int = MIN_LEAF) -> BoostedModel:
    """Stagewise least-squares boosting: each tree fits the current residuals."""
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must be in (0, 1]")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    init = float(y.mean())
    pred = np.full(len(y), init)
    trees = []
    for _ in range(n_trees):
        tree = fit_tree(X, y - pred, max_depth, min_leaf)
        pred += learning_rate * tree.predict(X)
        trees.append(tree)
    config = {"n_trees": n_trees, "learning_rate": learning_rate, "max_depth": max_depth, "min_leaf": min_leaf}
    return BoostedModel(tuple(trees), float(learning_rate), init, config)


def predict_gbm(model: BoostedModel, x) -> float:
    return float(model.predict(np.asarray(x, dtype=float).reshape(1, -1))[0])
