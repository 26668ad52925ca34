import json
import warnings

import numpy as np
import pytest

from lcmatch.dataset import (
    DataError, Dataset, Schema, dummify, load_csv, load_dataset, make_folds, standardize,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_csv_types_columns(tmp_path):
    p = write(tmp_path, "t,y,age,colour\n1,2.5,30,red\n0,1.0,41,blue\n1,0.5,28,red\n")
    d = load_dataset(p, Schema("t", "y", ("colour",)))
    assert d.column_names == ["age", "colour=blue", "colour=red"]
    assert [c.kind for c in d.columns] == ["continuous", "binary", "binary"]
    assert d.columns[1].parent_categorical == "colour"
    np.testing.assert_array_equal(d.T, [1, 0, 1])
    np.testing.assert_allclose(d.X[:, 1:], [[0, 1], [1, 0], [0, 1]])


def test_blank_cell_error_names_row_and_column(tmp_path):
    p = write(tmp_path, "t,y,a\n1,2,3\n0,,4\n")
    with pytest.raises(DataError, match=r"row 2, column 'y'"):
        load_csv(p, Schema("t", "y"))


def test_unparseable_value_reported(tmp_path):
    p = write(tmp_path, "t,y,a\n1,2,3\n0,1,abc\n")
    with pytest.raises(DataError, match=r"'abc' at row 2, column 'a'"):
        load_csv(p, Schema("t", "y"))


def test_treatment_needs_two_levels(tmp_path):
    p = write(tmp_path, "t,y,a\n1,2,3\n1,1,4\n")
    with pytest.raises(DataError, match="1 distinct"):
        load_csv(p, Schema("t", "y"))


def test_text_treatment_needs_mapping(tmp_path):
    p = write(tmp_path, "t,y,a\nyes,2,3\nno,1,4\n")
    with pytest.raises(DataError, match="treatment_map"):
        load_csv(p, Schema("t", "y"))
    raw = load_csv(p, Schema("t", "y", treatment_map={"yes": 1, "no": 0}))
    np.testing.assert_array_equal(raw.T, [1, 0])


def test_schema_sidecar(tmp_path):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"treatment": "tr", "outcome": "out", "categoricals": ["c"]}))
    s = Schema.from_json(sc)
    assert s.treatment == "tr" and s.categoricals == ("c",)


def test_single_level_categorical_dropped_with_warning(tmp_path):
    p = write(tmp_path, "t,y,a,c\n1,2,3,x\n0,1,4,x\n")
    with pytest.warns(UserWarning, match="single level"):
        d = dummify(load_csv(p, Schema("t", "y", ("c",))))
    assert d.column_names == ["a"]


def test_dataset_validation_and_immutability():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), [0, 1, 2], np.zeros(3))
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan, 1.0], [0, 0]]), [0, 1], [1.0, 2.0])
    d = Dataset(np.zeros((2, 2)), [0, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        d.X[0, 0] = 1.0
    with pytest.raises(DataError, match="nonempty"):
        Dataset(np.zeros((2, 1)), [1, 1], [0.0, 0.0]).check_arms()


def test_make_folds_partition_and_determinism():
    plan = make_folds(103, 5, seed=4)
    sizes = np.bincount(plan.assignments)
    assert sizes.max() - sizes.min() <= 1
    all_rows = np.concatenate([plan.rows(f) for f in range(5)])
    assert sorted(all_rows) == list(range(103))
    np.testing.assert_array_equal(plan.assignments, make_folds(103, 5, seed=4).assignments)
    assert not np.array_equal(plan.assignments, make_folds(103, 5, seed=5).assignments)
    with pytest.raises(ValueError):
        make_folds(3, 4, 0)


def test_standardize_uses_fit_rows_only():
    rng = np.random.default_rng(0)
    X = rng.normal(5.0, 3.0, (50, 3))
    X[:, 2] = 7.0
    Z, st = standardize(X, np.arange(20))
    np.testing.assert_allclose(Z[:20, :2].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(Z[:20, :2].std(axis=0, ddof=1), 1)
    assert st.scales[2] == 1.0
    np.testing.assert_allclose(st.inverse(Z), X)
    # changing rows outside the fit set leaves the statistics alone
    X2 = X.copy()
    X2[30:] += 100
    _, st2 = standardize(X2, np.arange(20))
    np.testing.assert_array_equal(st.means, st2.means)
