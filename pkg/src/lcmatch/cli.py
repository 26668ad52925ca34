"""``lcmatch`` command line: generate data, run methods, audit groups, benchmark.

Every command writes CSV/JSON into ``--out`` (default: ``$LCMATCH_OUTPUT_DIR``
or ``./lcmatch-out``).  Failures exit with status 1 (2 for usage errors) and
print one JSON object describing the error on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, audit, dgp, experiments
from .dataset import Schema, load_dataset
from .estimate import METHODS, RunConfig, crossfit_run
from .matching import GroupSet
from .metric import LassoConfig, TreeConfig

logger = logging.getLogger("lcmatch")

OUT_ENV = "LCMATCH_OUTPUT_DIR"
DEFAULT_OUT = "lcmatch-out"
DATA_SCHEMA = Schema(treatment="t", outcome="y")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        sys.exit(2)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(experiments._jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT).resolve()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _array_digest(a) -> str:
    return hashlib.sha256(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes()).hexdigest()[:16]


def _dgp_extra(args) -> dict:
    extra = {}
    if getattr(args, "k", None) is not None:
        extra["k"] = args.k
    if getattr(args, "kappa", None) is not None:
        extra["kappa"] = args.kappa
    return extra


def _write_sample(sample: dgp.DgpSample, out: Path) -> dict:
    paths = {"data": out / "data.csv", "truth": out / "truth.csv", "params": out / "params.json"}
    sample.data_frame().to_csv(paths["data"], index=False)
    sample.truth_frame().to_csv(paths["truth"], index=False)
    _write_json(paths["params"], sample.params)
    return {k: str(v) for k, v in paths.items()}


# -- dgp -----------------------------------------------------------------------

def cmd_dgp(args) -> dict:
    out = _out_dir(args)
    sample = dgp.generate(args.name, args.n, args.p, seed=args.seed, **_dgp_extra(args))
    paths = _write_sample(sample, out)
    return {"command": "dgp", "outputs": paths, "params": sample.params}


# -- run -----------------------------------------------------------------------

def _schema(args) -> Schema:
    if args.schema:
        return Schema.from_json(args.schema)
    cats = tuple(c for c in (args.categoricals or "").split(",") if c)
    return Schema(treatment=args.treatment, outcome=args.outcome, categoricals=cats)


def _run_config(args) -> RunConfig:
    support = [int(s) for s in args.oracle_support.split(",")] if args.oracle_support else None
    return RunConfig(
        method=args.method, K=args.K, eta=args.eta, seed=args.seed, estimator=args.estimator,
        repeats=args.repeats, crossfit=not args.no_crossfit, K1=args.k1, K2=args.k2,
        lap_prognostic=args.lap_prognostic, oracle_support=support,
        lasso=LassoConfig(k_folds=args.lasso_folds, n_lambdas=args.n_lambdas, eps_ratio=args.eps_ratio,
                          tol=args.tol, max_sweeps=args.max_sweeps),
        tree=TreeConfig(max_depth=args.tree_depth, min_leaf=args.tree_min_leaf),
        gbm_trees=args.gbm_trees, gbm_rate=args.gbm_rate, threads=args.threads,
    )


def cmd_run(args) -> dict:
    out = _out_dir(args)
    outputs = {}
    if args.dgp:
        sample = dgp.generate(args.dgp, args.n, args.p, seed=args.dgp_seed if args.dgp_seed is not None else args.seed,
                              **_dgp_extra(args))
        outputs.update(_write_sample(sample, out))
        data = sample.dataset
        source = {"dgp": sample.params, "path": outputs["data"], "schema": DATA_SCHEMA.__dict__}
        if args.method == "oracle" and not args.oracle_support:
            args.oracle_support = ",".join(map(str, sample.support))
    elif args.data:
        schema = _schema(args)
        data = load_dataset(args.data, schema)
        source = {"path": str(Path(args.data).resolve()), "schema": dict(schema.__dict__)}
    else:
        raise CliError("run needs --data or --dgp")
    cfg = _run_config(args)
    res = crossfit_run(data, cfg)

    outputs["cates"] = str(out / "cates.csv")
    res.estimates.to_frame().to_csv(outputs["cates"], index=False)
    outputs["metrics"] = str(out / "metrics.json")
    _write_json(Path(outputs["metrics"]), [
        {"repeat": rec.repeat, "fold": rec.fold, "metrics": [m.to_dict() for m in rec.metrics]}
        for rec in res.folds
    ])
    outputs["groups"] = str(out / "groups.csv")
    frames = []
    for rec in res.folds:
        df = rec.groups.to_frame(rec.fold)
        df.insert(0, "repeat", rec.repeat)
        frames.append(df)
    pd.concat(frames, ignore_index=True).to_csv(outputs["groups"], index=False)

    outputs["manifest"] = str(out / "manifest.json")
    manifest = {
        "command": "run",
        "version": __version__,
        "config": cfg.to_dict(),
        "data": source,
        "column_names": data.column_names,
        "seeds": {"run": cfg.seed},
        "folds": res.fold_assignments(),
        "metric_digests": [
            {"repeat": rec.repeat, "fold": rec.fold, "digests": [m.digest() for m in rec.metrics]}
            for rec in res.folds
        ],
        "timings": {
            "total": res.timings,
            "per_fold": [{"repeat": rec.repeat, "fold": rec.fold, **rec.timings} for rec in res.folds],
        },
        "estimates": res.estimates.meta,
        "cate_digest": _array_digest(res.estimates.cate),
        "outputs": outputs,
    }
    _write_json(Path(outputs["manifest"]), manifest)
    return {"command": "run", "outputs": outputs}


# -- audit ---------------------------------------------------------------------

def _load_groups(path: Path) -> GroupSet:
    df = pd.read_csv(path)
    k = int(df["rank"].max() + 1) if len(df) else 1
    keys = ["repeat", "fold"] if "repeat" in df else ["fold"]
    parts = [GroupSet.from_frame(g, k) for _, g in df.groupby(keys, sort=True)]
    return audit.concat_groups(parts)


def cmd_audit(args) -> dict:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    groups_path = run_dir / "groups.csv"
    if not groups_path.exists():
        raise CliError(f"{groups_path} not found; run 'lcmatch run' first")
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    if args.data:
        schema = _schema(args)
        data = load_dataset(args.data, schema)
    elif manifest.get("data", {}).get("path"):
        src = manifest["data"]
        s = src["schema"]
        data = load_dataset(src["path"], Schema(s["treatment"], s["outcome"], tuple(s.get("categoricals", ())),
                                                s.get("treatment_map")))
    else:
        raise CliError("audit needs --data (no data path recorded in the run manifest)")
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)

    groups = _load_groups(groups_path)
    if groups.queries.size and groups.queries.max() >= data.n:
        raise CliError("groups reference units beyond the dataset; wrong --data?")
    kinds = [c.kind for c in data.columns]
    method = manifest.get("config", {}).get("method", "")
    report = audit.audit_report(groups, data.X, data.column_names, kinds, method=method)
    outputs = {"tightness": str(out / "tightness.csv"), "dispersion": str(out / "dispersion.csv")}
    report[["column", "kind", "tightness", "mismatch_rate", "method", "group_size"]].to_csv(
        outputs["tightness"], index=False)
    report[["column", "kind", "dispersion", "method", "group_size"]].to_csv(outputs["dispersion"], index=False)

    truth_path = args.truth
    if truth_path is None and args.use_run_truth and (run_dir / "truth.csv").exists():
        truth_path = run_dir / "truth.csv"
    notes = {"empty_groups": report.attrs["empty_groups"], "singleton_groups": report.attrs["singleton_groups"]}
    if truth_path:
        truth = pd.read_csv(truth_path)
        cates = pd.read_csv(run_dir / "cates.csv")
        true_cate = truth["true_cate"].to_numpy()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            err = audit.cate_errors(cates["cate"].to_numpy(), true_cate, float(true_cate.mean()))
        outputs["errors"] = str(out / "errors.csv")
        pd.DataFrame({"unit": cates["unit"], "cate": cates["cate"], "true_cate": true_cate,
                      "error": err["errors"]}).to_csv(outputs["errors"], index=False)
        notes["errors"] = {k: v for k, v in err.items() if k != "errors"}
    else:
        notes["errors"] = "omitted: no ground truth supplied"
    outputs["manifest"] = str(out / "audit_manifest.json")
    _write_json(Path(outputs["manifest"]), {"command": "audit", "version": __version__, "run_dir": str(run_dir),
                                            "notes": notes, "outputs": outputs})
    return {"command": "audit", "outputs": outputs}


# -- bench ---------------------------------------------------------------------

def _ints(s: str) -> tuple:
    return tuple(int(v) for v in s.split(",") if v)


def cmd_bench(args) -> dict:
    out = _out_dir(args)
    ns, ps = _ints(args.n_grid), _ints(args.p_grid)
    cap = args.max_cells
    keep_n = tuple(n for n in ns if n * args.fixed_p <= cap)
    keep_p = tuple(p for p in ps if args.fixed_n * p <= cap)
    skipped = [(n, args.fixed_p) for n in ns if n not in keep_n] + [(args.fixed_n, p) for p in ps if p not in keep_p]
    for n, p in skipped:
        logger.warning("skipping n=%d p=%d: n*p exceeds --max-cells=%d", n, p, cap)
    df = experiments.scaling(ns=keep_n, ps=keep_p, fixed_p=args.fixed_p, fixed_n=args.fixed_n,
                             methods=tuple(args.methods.split(",")), K=args.K, eta=args.eta,
                             repeats=args.repeats, seed=args.seed, threads=args.threads)
    paths = {"timings": str(out / "bench.csv"), "summary": str(out / "bench_summary.csv")}
    df.to_csv(paths["timings"], index=False)
    summary = df.groupby(["method", "n", "p"], sort=False).agg(
        total=("total", "mean"), learn=("learn", "mean"), match=("match", "mean"), estimate=("estimate", "mean"),
        nonzero_weights=("nonzero_weights", "mean"), repeats=("repeat", "size"),
        deterministic=("cate_digest", lambda s: s.nunique() == 1),
    ).reset_index()
    summary.to_csv(paths["summary"], index=False)
    paths["manifest"] = str(out / "bench_manifest.json")
    _write_json(Path(paths["manifest"]), {"command": "bench", "version": __version__, "args": vars(args) | {"func": None},
                                          "skipped": skipped, "outputs": paths})
    return {"command": "bench", "outputs": paths}


# -- experiment ----------------------------------------------------------------

def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            val = json.loads(v)
        except json.JSONDecodeError:
            val = v
        out[k.replace("-", "_")] = tuple(val) if isinstance(val, list) else val
    return out


def cmd_experiment(args) -> dict:
    out = _out_dir(args)
    kwargs = _overrides(args.set)
    if args.seeds is not None:
        kwargs["seeds"] = range(args.seeds)
    fn = experiments.PRESETS[args.preset]
    stem = args.preset.replace("-", "_")
    paths = {}
    if args.preset == "scaling":
        df = fn(**kwargs)
        paths["figure"] = str(out / f"fig_{stem}.csv")
        df.to_csv(paths["figure"], index=False)
        summary = {"name": "scaling", "rows": df.drop(columns=["cate_digest"]).to_dict(orient="records")}
    else:
        res = fn(**kwargs)
        paths["figure"] = str(out / f"fig_{stem}.csv")
        res.errors.to_csv(paths["figure"], index=False)
        paths["figure_summary"] = str(out / f"fig_{stem}_summary.csv")
        res.summary.to_csv(paths["figure_summary"], index=False)
        summary = res.to_json()
    summary["overrides"] = {k: list(v) if isinstance(v, (range, tuple)) else v for k, v in kwargs.items()}
    summary["version"] = __version__
    paths["summary"] = str(out / "summary.json")
    summary["outputs"] = paths
    _write_json(Path(paths["summary"]), summary)
    return {"command": "experiment", "outputs": paths}


# -- parser --------------------------------------------------------------------

def _add_dgp_args(p, required=True):
    p.add_argument("--n", type=int, required=required, help="number of units")
    p.add_argument("--p", type=int, required=required, help="number of covariates")
    p.add_argument("--k", type=int, help="important covariates (quadratic)")
    p.add_argument("--kappa", type=int, help="covariates driving treatment (quadratic)")


def _add_schema_args(p):
    p.add_argument("--schema", help="JSON sidecar {treatment, outcome, categoricals}")
    p.add_argument("--treatment", default="t")
    p.add_argument("--outcome", default="y")
    p.add_argument("--categoricals", default="", help="comma-separated categorical columns")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lcmatch", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"lcmatch {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("dgp", parents=[common], help="write a synthetic dataset with ground truth")
    p.add_argument("name", choices=sorted(dgp.GENERATORS))
    _add_dgp_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dgp)

    p = sub.add_parser("run", parents=[common], help="cross-fitted CATE estimation")
    p.add_argument("--data", help="input CSV")
    _add_schema_args(p)
    p.add_argument("--dgp", choices=sorted(dgp.GENERATORS), help="generate the input instead of reading a CSV")
    _add_dgp_args(p, required=False)
    p.add_argument("--dgp-seed", type=int, help="generator seed (default: --seed)")
    p.add_argument("--method", choices=METHODS, default="lcm")
    p.add_argument("--K", type=int, default=10, help="neighbours per arm")
    p.add_argument("--eta", type=int, default=5, help="number of folds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimator", choices=("mean", "linear"), default="mean")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--no-crossfit", action="store_true", help="train on fold 0 only")
    p.add_argument("--k1", type=int, default=25, help="prognostic candidates (lap)")
    p.add_argument("--k2", type=int, default=5, help="kept neighbours (lap)")
    p.add_argument("--lap-prognostic", choices=("linear", "np"), default="linear")
    p.add_argument("--oracle-support", help="comma-separated 0-based columns (oracle)")
    lc, tc = LassoConfig(), TreeConfig()
    p.add_argument("--lasso-folds", type=int, default=lc.k_folds)
    p.add_argument("--n-lambdas", type=int, default=lc.n_lambdas)
    p.add_argument("--eps-ratio", type=float, default=lc.eps_ratio)
    p.add_argument("--tol", type=float, default=lc.tol)
    p.add_argument("--max-sweeps", type=int, default=lc.max_sweeps)
    p.add_argument("--tree-depth", type=int, default=tc.max_depth)
    p.add_argument("--tree-min-leaf", type=int, default=tc.min_leaf)
    p.add_argument("--gbm-trees", type=int, default=RunConfig.gbm_trees)
    p.add_argument("--gbm-rate", type=float, default=RunConfig.gbm_rate)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", parents=[common], help="tightness and dispersion of a run's groups")
    p.add_argument("run_dir")
    p.add_argument("--data", help="input CSV (default: path recorded in the run manifest)")
    _add_schema_args(p)
    p.add_argument("--truth", help="truth CSV with a true_cate column")
    p.add_argument("--use-run-truth", action="store_true", help="use truth.csv from the run directory if present")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bench", parents=[common], help="stage timings over n and p grids")
    p.add_argument("--n-grid", default="256,512,1024,2048,4096,8192")
    p.add_argument("--p-grid", default="8,16,32,64,128,256,512,1024")
    p.add_argument("--fixed-p", type=int, default=64)
    p.add_argument("--fixed-n", type=int, default=2048)
    p.add_argument("--methods", default="lcm")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--eta", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-cells", type=int, default=2**24, help="skip grid points with n*p above this")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("experiment", parents=[common], help="run a named comparison recipe")
    p.add_argument("preset", choices=sorted(experiments.PRESETS))
    p.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a recipe argument (JSON value)")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as JSON
        err = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "fold", None) is not None:
            err["fold"] = exc.fold
        print(json.dumps(err), file=sys.stderr)
        logger.debug("failure", exc_info=True)
        return 1
    print(json.dumps(result["outputs"]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
