import numpy as np
import pytest

from lcmatch import trees


def test_single_split_hand_trace():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [10.0], [11.0], [12.0], [13.0]])
    y = np.array([1, 1, 1, 1, 5, 5, 5, 5], dtype=float)
    m = trees.fit_tree(X, y, max_depth=1, min_leaf=1)
    assert m.feature[0] == 0 and m.threshold[0] == pytest.approx(6.5)
    np.testing.assert_allclose(m.predict(X), y)
    # SSE drop = 8 * var = 32
    assert m.impurity_decrease[0] == pytest.approx(32.0)
    np.testing.assert_allclose(trees.tree_importance(m), [1.0])


def test_ties_go_left_and_threshold_between_values():
    X = np.array([[1.0], [1.0], [2.0], [2.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    m = trees.fit_tree(X, y, max_depth=1, min_leaf=1)
    assert 1.0 <= m.threshold[0] < 2.0
    assert m.predict(np.array([[1.0]]))[0] == 0.0


def test_importance_identifies_relevant_feature():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 6))
    y = X[:, 2] ** 2 + 0.1 * rng.normal(size=400)
    imp = trees.tree_importance(trees.fit_tree(X, y))
    assert imp.sum() == pytest.approx(1.0)
    assert imp[2] > 0.9


def test_min_leaf_respected_and_depth_capped():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 3))
    y = rng.normal(size=100)
    m = trees.fit_tree(X, y, max_depth=3, min_leaf=10)
    leaves = m.feature == -1
    assert (m.n_samples[leaves] >= 10).all()
    counts = np.bincount(m.leaves(X))
    assert counts[counts > 0].min() >= 10
    assert m.n_nodes <= 15


def test_constant_outcome_root_only():
    X = np.random.default_rng(2).normal(size=(30, 2))
    m = trees.fit_tree(X, np.ones(30))
    assert m.n_nodes == 1
    np.testing.assert_array_equal(trees.tree_importance(m), [0.0, 0.0])


def test_predict_tree_single_row_matches_batch():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 3))
    m = trees.fit_tree(X, X[:, 0] + X[:, 1])
    batch = m.predict(X)
    assert all(trees.predict_tree(m, X[i]) == batch[i] for i in range(50))


def test_gbm_reduces_training_error_monotonically():
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, size=(300, 4))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=300)
    g = trees.fit_gbm(X, y, n_trees=40)
    mse = [np.mean((y - p) ** 2) for p in g.staged_predict(X)]
    assert np.all(np.diff(mse) <= 1e-12)
    assert mse[-1] < 0.2 * np.var(y)
    assert trees.predict_gbm(g, X[0]) == pytest.approx(g.predict(X[:1])[0])


def test_gbm_rate_validation():
    with pytest.raises(ValueError):
        trees.fit_gbm(np.zeros((5, 1)), np.zeros(5), learning_rate=0.0)
