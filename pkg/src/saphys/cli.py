"""Command-line interface.

Exit codes: 0 success, 2 when every requested model failed to converge,
1 on errors.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
import pandas as pd

from .dataset import FLOAT_FMT, DataQualityWarning, FeatureMatrix, impute_features, load_dataset
from .extract import ExtractConfig, extract_features
from .modeling.evaluation import Problem, ablation, outer_cv, sensor_fusion, shuffled_null
from .modeling.pretrained import TABLE_IDS, ModelTable, load_pretrained
from .modeling.selection import LassoConfig
from .pipeline import ANALYSES, RunConfig, StageError, fold_rows, null_rows, run_pipeline
from .scoring import TARGETS, labels, read_scores, score_table, write_scores
from .synth import DesignConfig, SynthConfig, generate_synthetic, synthetic_design

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2


def _config(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _lasso(args, cfg) -> LassoConfig:
    d = dict(cfg.get("lasso", {}))
    if getattr(args, "runs", None) is not None:
        d["runs"] = args.runs
    return LassoConfig(**d)


def _seed(args, cfg) -> int:
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


def _problem(args, level) -> Problem:
    fm = FeatureMatrix.from_csv(args.features)
    if not np.isfinite(fm.values).all():
        fm = impute_features(fm)
    if getattr(args, "sensors", None):
        fm = fm.select_columns(np.isin(fm.sensors, args.sensors.split(",")))
    return Problem.from_frames(fm, labels(read_scores(args.scores), level))


def _report(rows, out):
    df = pd.DataFrame(rows)
    if out:
        df.to_csv(out, index=False, float_format=FLOAT_FMT)
    pooled = df[df["fold"].astype(str) == "pooled"] if "fold" in df else df
    print(pooled.to_string(index=False))


def cmd_synth(args, cfg):
    seed = _seed(args, cfg)
    if args.design:
        d = dict(cfg.get("design", {}))
        if "coupling" in d:
            d["coupling"] = tuple(tuple(c) for c in d["coupling"])
        if "sensors" in d:
            d["sensors"] = tuple(d["sensors"])
        des = synthetic_design(DesignConfig(**{**d, "seed": seed}))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        des.features.to_csv(out / "features.csv")
        write_scores(out / "scores.csv", des.scores)
        print(f"wrote feature-level design to {out}")
        return EXIT_OK
    sc = SynthConfig.from_mapping({**cfg.get("synth", {}), "seed": seed})
    generate_synthetic(sc, args.out)
    print(f"wrote synthetic dataset to {args.out}")
    return EXIT_OK


def cmd_extract(args, cfg):
    ds = load_dataset(args.dataset)
    fm = extract_features(ds, ExtractConfig(**cfg.get("extract", {})), args.jobs)
    fm.to_csv(args.out)
    print(f"{len(fm.rows)} trials x {len(fm.columns)} features -> {args.out}")
    return EXIT_OK


def cmd_score(args, cfg):
    ds = load_dataset(args.dataset)
    resp = {pid: p.responses for pid, p in ds.participants.items()}
    trials = {pid: [t for t, _, _ in p.events.trials] for pid, p in ds.participants.items()}
    table = score_table(resp, trials, total_of=args.total_of)
    write_scores(args.out, table)
    print(f"{int(table['retained'].sum())} retained of {len(table)} trials -> {args.out}")
    return EXIT_OK


def _levels(args):
    return TARGETS if args.level == "all" else (args.level,)


def cmd_crossval(args, cfg):
    rows, conv = [], False
    for lv in _levels(args):
        res = outer_cv(_problem(args, lv), _lasso(args, cfg), (_seed(args, cfg), TARGETS.index(lv)))
        rows += fold_rows("direct", lv, res.report)
        conv |= res.report.cr > 0
    _report(rows, args.out)
    return EXIT_OK if conv else EXIT_NONCONVERGED


def cmd_null(args, cfg):
    rows, conv = [], False
    for lv in _levels(args):
        prob = _problem(args, lv)
        seed = (_seed(args, cfg), TARGETS.index(lv))
        ref = outer_cv(prob, _lasso(args, cfg), seed).report
        nl = shuffled_null(prob, _lasso(args, cfg), args.shuffles, seed, reference=ref, n_jobs=args.jobs)
        rows += fold_rows("direct", lv, ref) + null_rows(lv, nl)[1]
        conv |= ref.cr > 0
    _report(rows, args.out)
    return EXIT_OK if conv else EXIT_NONCONVERGED


def cmd_fuse(args, cfg):
    rows, conv = [], False
    for lv in _levels(args):
        res = sensor_fusion(_problem(args, lv), _lasso(args, cfg), (_seed(args, cfg), TARGETS.index(lv)))
        rows += fold_rows("fusion", lv, res.report)
        conv |= res.report.cr > 0
    _report(rows, args.out)
    return EXIT_OK if conv else EXIT_NONCONVERGED


def cmd_ablate(args, cfg):
    rows, conv = [], False
    for lv in _levels(args):
        res = ablation(_problem(args, lv), _lasso(args, cfg), (_seed(args, cfg), TARGETS.index(lv)),
                       n_jobs=args.jobs)
        for s, rep in res.items():
            rows += fold_rows("direct" if s == "all" else "ablate", lv, rep,
                              removed="" if s == "all" else s)
            conv |= rep.cr > 0
    _report(rows, args.out)
    return EXIT_OK if conv else EXIT_NONCONVERGED


def _model(spec: str) -> ModelTable:
    p = Path(spec)
    if p.is_file():
        return ModelTable.load(p)
    stem = p.stem if p.suffix == ".json" else spec
    if stem.lower() in {t.lower() for t in TABLE_IDS}:
        return load_pretrained(stem)
    raise FileNotFoundError(f"no model file or packaged table {spec!r}")


def cmd_predict(args, cfg):
    model = _model(args.model)
    fm = FeatureMatrix.from_csv(args.features)
    yhat = model.predict_matrix(fm)
    df = pd.DataFrame({"participant": [r[0] for r in fm.rows], "trial": [r[1] for r in fm.rows],
                       "prediction": yhat})
    if args.out:
        df.to_csv(args.out, index=False, float_format=FLOAT_FMT)
    else:
        df.to_csv(sys.stdout, index=False, float_format=FLOAT_FMT)
    return EXIT_OK


def cmd_run(args, cfg):
    d = dict(cfg.get("run", {}))
    d.setdefault("seed", cfg.get("seed", 0))
    if args.seed is not None:
        d["seed"] = args.seed
    for k in ("dataset", "out", "features", "scores"):
        if getattr(args, k, None):
            d[k] = getattr(args, k)
    if args.analyses:
        d["analyses"] = args.analyses.split(",")
    if "lasso" in cfg:
        d["lasso"] = cfg["lasso"]
    if "extract" in cfg:
        d["extract"] = cfg["extract"]
    rc = RunConfig.from_mapping(d)
    if args.jobs:
        rc = replace(rc, n_jobs=args.jobs)
    res = run_pipeline(rc)
    pooled = res.reports[res.reports["fold"] == "pooled"][["analysis", "level", "removed", "q2", "mae_stdzd", "cr"]]
    print(pooled.to_string(index=False))
    print(f"reports in {res.out}")
    return EXIT_OK if res.any_converged or set(rc.analyses) == {"null"} else EXIT_NONCONVERGED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saphys", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="TOML config file (top-level seed, [synth], [lasso], [run], ...)")
    ap.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--design", action="store_true",
                   help="write a feature-level design (features.csv, scores.csv) instead of signals")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("extract", help="extract the trial feature matrix")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="features.csv")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("score", help="compute the SA score table")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="scores.csv")
    p.add_argument("--total-of", choices=("standardized", "adjusted"), default="standardized")
    p.set_defaults(fn=cmd_score)

    def modeling(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--features", default="features.csv")
        p.add_argument("--scores", default="scores.csv")
        p.add_argument("--level", choices=(*TARGETS, "all"), default="total")
        p.add_argument("--runs", type=int, help="lasso runs per stage (default 50)")
        p.add_argument("--sensors", help="comma-separated sensor subset")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", help="report CSV path")
        p.set_defaults(fn=fn)
        return p

    modeling("crossval", cmd_crossval, "direct model, 5-fold outer cross-validation")
    modeling("null", cmd_null, "shuffled-label null distribution").add_argument("--shuffles", type=int, default=50)
    modeling("fuse", cmd_fuse, "R^2-weighted sensor fusion")
    modeling("ablate", cmd_ablate, "leave-one-sensor-out ablation")

    p = sub.add_parser("predict", help="apply a linear model file to a feature CSV")
    p.add_argument("--model", required=True, help="model JSON path or packaged table (l1, l2, l3, total)")
    p.add_argument("--features", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("run", help="full pipeline with reports and manifest")
    p.add_argument("--dataset")
    p.add_argument("--features")
    p.add_argument("--scores")
    p.add_argument("--out")
    p.add_argument("--analyses", help=f"comma-separated subset of {','.join(ANALYSES)}")
    p.add_argument("--jobs", type=int)
    p.set_defaults(fn=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args.config)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataQualityWarning)
            return args.fn(args, cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
