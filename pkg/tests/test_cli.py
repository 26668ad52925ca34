import json

import numpy as np
import pandas as pd
import pytest

from lcmatch import cli


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_dgp_sine(tmp_path, capsys):
    code, out, _ = run(capsys, "dgp", "sine", "--n", 500, "--p", 10, "--seed", 1, "--out", tmp_path)
    assert code == 0
    data = pd.read_csv(tmp_path / "data.csv")
    truth = pd.read_csv(tmp_path / "truth.csv")
    assert len(data) == 500 and list(data.columns[:2]) == ["t", "y"]
    np.testing.assert_allclose(truth.true_cate, -np.sin(data.X2))
    assert json.loads((tmp_path / "params.json").read_text())["seed"] == 1


def test_dgp_basic_quadratic_constant_truth(tmp_path, capsys):
    run(capsys, "dgp", "basic-quadratic", "--n", 100, "--p", 10, "--out", tmp_path)
    np.testing.assert_allclose(pd.read_csv(tmp_path / "truth.csv").true_cate, 10.0)


def test_unknown_dgp_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["dgp", "nope", "--n", "5", "--p", "2"])
    assert exc.value.code == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "usage"


def test_env_var_output_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    run(capsys, "dgp", "sine", "--n", 50, "--p", 3)
    assert (tmp_path / "env" / "data.csv").exists()


def test_run_lcm_outputs(tmp_path, capsys):
    code, out, _ = run(capsys, "run", "--dgp", "sine", "--n", 200, "--p", 5, "--eta", 4, "--K", 5,
                       "--out", tmp_path, "--threads", 1)
    assert code == 0
    cates = pd.read_csv(tmp_path / "cates.csv")
    assert list(cates.columns) == ["unit", "yhat0", "yhat1", "cate", "n_contributions"]
    assert len(cates) == 200 and (cates.n_contributions == 3).all()
    man = json.loads((tmp_path / "manifest.json").read_text())
    for path in man["outputs"].values():
        assert (tmp_path / path).exists()
    assert man["config"]["eta"] == 4 and man["config"]["lasso"]["n_lambdas"] == 100
    assert len(man["folds"]) == 4 and len(man["metric_digests"]) == 4
    assert set(man["timings"]["total"]) == {"learn", "match", "estimate"}
    assert man["version"]


def test_run_is_idempotent(tmp_path, capsys):
    for d in ("a", "b"):
        run(capsys, "run", "--dgp", "sine", "--n", 150, "--p", 4, "--eta", 3, "--out", tmp_path / d)
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["cate_digest"] == b["cate_digest"]
    assert (tmp_path / "a" / "cates.csv").read_text() == (tmp_path / "b" / "cates.csv").read_text()


def test_metalearner_two_weight_vectors(tmp_path, capsys):
    run(capsys, "run", "--dgp", "sine", "--n", 200, "--p", 5, "--method", "metalearner", "--out", tmp_path)
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert all(len(f["metrics"]) == 2 for f in metrics)


def test_lap_manifest_echoes_both_k(tmp_path, capsys):
    run(capsys, "run", "--dgp", "quadratic", "--n", 300, "--p", 8, "--method", "lap", "--k1", 25, "--k2", 5,
        "--eta", 2, "--no-crossfit", "--out", tmp_path)
    cfg = json.loads((tmp_path / "manifest.json").read_text())["config"]
    assert (cfg["K1"], cfg["K2"], cfg["crossfit"]) == (25, 5, False)


def test_run_from_csv_and_audit(tmp_path, capsys):
    run(capsys, "dgp", "quadratic", "--n", 200, "--p", 6, "--out", tmp_path / "d")
    code, _, _ = run(capsys, "run", "--data", tmp_path / "d" / "data.csv", "--treatment", "t", "--outcome", "y",
                     "--eta", 2, "--out", tmp_path / "r")
    assert code == 0
    code, _, _ = run(capsys, "audit", tmp_path / "r")
    assert code == 0
    assert not (tmp_path / "r" / "errors.csv").exists()
    man = json.loads((tmp_path / "r" / "audit_manifest.json").read_text())
    assert "omitted" in man["notes"]["errors"]
    tight = pd.read_csv(tmp_path / "r" / "tightness.csv")
    assert len(tight) == 6
    code, _, _ = run(capsys, "audit", tmp_path / "r", "--truth", tmp_path / "d" / "truth.csv", "--out", tmp_path / "a")
    errs = pd.read_csv(tmp_path / "a" / "errors.csv")
    assert len(errs) == 200 and (errs.error >= 0).all()


def test_audit_of_duplicated_data_has_zero_tightness(tmp_path, capsys):
    rng = np.random.default_rng(0)
    base = rng.integers(0, 3, size=(40, 2)).astype(float)
    X = np.repeat(base, 6, axis=0)
    T = np.tile([0, 1, 0, 1, 0, 1], 40)
    df = pd.DataFrame({"t": T, "y": X.sum(axis=1) + T, "a": X[:, 0], "b": X[:, 1]})
    df.to_csv(tmp_path / "dup.csv", index=False)
    run(capsys, "run", "--data", tmp_path / "dup.csv", "--method", "uniform", "--K", 1, "--eta", 2,
        "--out", tmp_path / "r")
    run(capsys, "audit", tmp_path / "r")
    tight = pd.read_csv(tmp_path / "r" / "tightness.csv")
    # 9 distinct cells, each repeated dozens of times in both arms
    np.testing.assert_allclose(tight.tightness, 0.0)


def test_failure_emits_json_error(tmp_path, capsys):
    code, _, err = run(capsys, "run", "--data", tmp_path / "missing.csv")
    assert code == 1
    assert json.loads(err.strip())["error"] == "DataError"
    code, _, err = run(capsys, "audit", tmp_path)
    assert code == 1 and "groups.csv" in json.loads(err.strip())["message"]


def test_bench_small_grid(tmp_path, capsys):
    code, _, _ = run(capsys, "bench", "--n-grid", "128,256", "--p-grid", "8,16", "--fixed-n", 256,
                     "--repeats", 2, "--out", tmp_path)
    assert code == 0
    summary = pd.read_csv(tmp_path / "bench_summary.csv")
    assert len(summary) == 4 and summary.deterministic.all()
    timings = pd.read_csv(tmp_path / "bench.csv")
    assert {"learn", "match", "estimate", "total", "nonzero_weights"} <= set(timings.columns)


def test_experiment_preset_writes_figure(tmp_path, capsys):
    code, _, _ = run(capsys, "experiment", "tree-vs-lcm", "--seeds", 1, "--set", "n=200", "--out", tmp_path)
    assert code == 0
    fig = pd.read_csv(tmp_path / "fig_tree_vs_lcm.csv")
    assert set(fig.method) == {"lcm", "tree"} and len(fig) == 400
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["overrides"]["n"] == 200
