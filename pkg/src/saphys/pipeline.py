"""End-to-end orchestration: features, scores, analyses, reports and manifest."""
from __future__ import annotations

import hashlib
import json
import platform
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .dataset import (FLOAT_FMT, DataQualityWarning, FeatureMatrix, impute_features, load_dataset)
from .extract import ExtractConfig, extract_features
from .modeling.evaluation import (CvResult, FoldModel, MetricReport, NullResult, Problem, ablation,
                                  outer_cv, sensor_fusion, shuffled_null)
from .modeling.pretrained import ModelTable
from .modeling.selection import LassoConfig
from .scoring import TARGETS, labels, score_table, write_scores

ANALYSES = ("direct", "fusion", "ablate", "null", "reduced")
REPORT_COLUMNS = ["analysis", "level", "fold", "q2", "mae_stdzd", "cr", "n_train", "n_test",
                  "converged", "n_predictors", "model_hash", "fingerprint", "removed", "detail"]


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {exc}")


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    out: str = "saphys-out"
    features: str | None = None  # precomputed feature CSV (skips extraction)
    scores: str | None = None  # precomputed score CSV (skips scoring)
    analyses: tuple[str, ...] = ("direct",)
    levels: tuple[str, ...] = TARGETS
    seed: int = 0
    n_shuffles: int = 50
    sensors: tuple[str, ...] | None = None
    reduced_sensors: tuple[str, ...] = ("eeg", "eye")
    n_jobs: int = 1
    lasso: LassoConfig = LassoConfig()
    extract: ExtractConfig = ExtractConfig()
    total_of: str = "standardized"

    def __post_init__(self):
        if not self.analyses:
            raise ValueError("select at least one analysis")
        bad = set(self.analyses) - set(ANALYSES)
        if bad:
            raise ValueError(f"unknown analyses {sorted(bad)}; expected {ANALYSES}")
        bad = {str(lv).lower() for lv in self.levels} - set(TARGETS)
        if bad:
            raise ValueError(f"unknown SA levels {sorted(bad)}; expected {TARGETS}")
        if self.dataset is None and (self.features is None or self.scores is None):
            raise ValueError("need a dataset or both precomputed features and scores")

    @classmethod
    def from_mapping(cls, d: Mapping) -> "RunConfig":
        d = dict(d)
        for k in ("analyses", "levels", "sensors", "reduced_sensors"):
            if d.get(k) is not None:
                v = d[k]
                d[k] = tuple(str(x).lower() for x in ([v] if isinstance(v, (str, int)) else v))
        if "lasso" in d:
            d["lasso"] = LassoConfig(**d["lasso"])
        if "extract" in d:
            d["extract"] = ExtractConfig(**d["extract"])
        return cls(**d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out")
        d.pop("n_jobs")  # parallelism never changes results
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    return {"saphys": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__, "numba": numba.__version__}


def fold_rows(analysis: str, level: str, report: MetricReport, removed: str = "") -> list[dict]:
    rows = []
    for f in report.folds:
        rows.append({"analysis": analysis, "level": level, "fold": str(f["fold"]), "q2": f["q2"],
                     "mae_stdzd": f["mae_stdzd"], "cr": float(f["converged"]),
                     "n_train": f["n_train"], "n_test": f["n_test"], "converged": f["converged"],
                     "n_predictors": f.get("n_predictors", ""), "model_hash": f.get("model_hash", ""),
                     "fingerprint": f.get("fingerprint", ""), "removed": removed,
                     "detail": json.dumps({k: v for k, v in f.items() if k.startswith("weight_")},
                                          sort_keys=True) if analysis in ("fusion", "reduced") else ""})
    rows.append({"analysis": analysis, "level": level, "fold": "pooled", "q2": report.q2,
                 "mae_stdzd": report.mae_stdzd, "cr": report.cr, "removed": removed})
    return rows


def null_rows(level: str, null: NullResult) -> tuple[list[dict], list[dict]]:
    per = [{"level": level, "shuffle": i, "q2": r.q2, "mae_stdzd": r.mae_stdzd, "cr": r.cr}
           for i, r in enumerate(null.reports)]
    summary = {"analysis": "null", "level": level, "fold": "pooled", "q2": null.mean,
               "mae_stdzd": float(np.nanmean([r.mae_stdzd for r in null.reports])),
               "cr": float(np.mean([r.cr for r in null.reports])),
               "detail": json.dumps({"q2_sd": null.sd, "n_shuffles": len(null.reports),
                                     "n_negative": null.n_negative, "n_exceeding": null.n_exceeding},
                                    sort_keys=True)}
    return per, [summary]


def export_fold_model(fm: FoldModel, names: Sequence[str], table_id: str, seed) -> ModelTable:
    """A converged fold model as a model file in unstandardized feature units."""
    from .dataset import FeatureKey
    icpt, coef = fm.raw_units()
    terms = [(FeatureKey.parse(names[j]), float(c)) for j, c in zip(fm.columns, coef)]
    m = fm.model
    return ModelTable(table_id, icpt, terms,
                      {"r2": m.r2, "q2_loto": m.q2_loto, "q2_lopo": m.q2_lopo, "seed": seed})


def write_csv(path: Path, rows: list[dict], columns: Sequence[str] | None = None) -> None:
    df = pd.DataFrame(rows, columns=columns)
    df.to_csv(path, index=False, float_format=FLOAT_FMT)


def load_inputs(cfg: RunConfig, out: Path) -> tuple[FeatureMatrix, pd.DataFrame]:
    """Features (imputed) and score table, computed or read; both written to ``out``."""
    ds = None
    try:
        if cfg.features is not None:
            fm = FeatureMatrix.from_csv(cfg.features)
        else:
            ds = load_dataset(cfg.dataset)
            fm = extract_features(ds, cfg.extract, cfg.n_jobs)
            fm.to_csv(out / "features.csv")
    except Exception as exc:
        raise StageError("extract", exc) from exc
    try:
        if cfg.scores is not None:
            from .scoring import read_scores
            scores = read_scores(cfg.scores)
        else:
            ds = ds or load_dataset(cfg.dataset)
            resp = {pid: p.responses for pid, p in ds.participants.items()}
            trials = {pid: [t for t, _, _ in p.events.trials] for pid, p in ds.participants.items()}
            scores = score_table(resp, trials, total_of=cfg.total_of)
            write_scores(out / "scores.csv", scores)
    except Exception as exc:
        raise StageError("score", exc) from exc
    try:
        if not np.isfinite(fm.values).all():
            fm = impute_features(fm)
        if cfg.sensors is not None:
            fm = fm.select_columns(np.isin(fm.sensors, list(cfg.sensors)))
        fm.to_csv(out / "features_imputed.csv")
    except Exception as exc:
        raise StageError("impute", exc) from exc
    return fm, scores


@dataclass
class RunResult:
    out: Path
    reports: pd.DataFrame
    any_converged: bool
    manifest: dict = field(default_factory=dict)


def run_pipeline(cfg: RunConfig) -> RunResult:
    """Extract, score, impute, join retained trials and run the requested analyses."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    fm, scores = load_inputs(cfg, out)
    rows, null_per = [], []
    any_conv = False
    for level in cfg.levels:
        level = str(level).lower()
        try:
            prob = Problem.from_frames(fm, labels(scores, level))
        except Exception as exc:
            raise StageError(f"join[{level}]", exc) from exc
        seed = (cfg.seed, TARGETS.index(level))
        direct: CvResult | None = None
        if "direct" in cfg.analyses or "ablate" in cfg.analyses or "null" in cfg.analyses:
            direct = _stage("direct", level, outer_cv, prob, cfg.lasso, seed)
        if "direct" in cfg.analyses:
            rows += fold_rows("direct", level, direct.report)
            any_conv |= direct.report.cr > 0
            mdir = out / "models" / level
            mdir.mkdir(parents=True, exist_ok=True)
            for fmod in direct.fold_models:
                if fmod.converged:
                    export_fold_model(fmod, prob.names, f"{level}-fold{fmod.fold}", list(seed)).save(
                        mdir / f"fold{fmod.fold}.json")
        if "fusion" in cfg.analyses:
            fu = _stage("fusion", level, sensor_fusion, prob, cfg.lasso, seed)
            rows += fold_rows("fusion", level, fu.report)
            any_conv |= fu.report.cr > 0
        if "reduced" in cfg.analyses:
            sub = [s for s in cfg.reduced_sensors if s in set(prob.sensors.tolist())]
            if not sub:
                raise StageError(f"reduced[{level}]", ValueError("no reduced-set sensor has features"))
            red = _stage("reduced", level, sensor_fusion, prob, cfg.lasso, seed, sensors=sub)
            rows += fold_rows("reduced", level, red.report)
            any_conv |= red.report.cr > 0
        if "ablate" in cfg.analyses:
            ab = _stage("ablate", level, ablation, prob, cfg.lasso, seed, n_jobs=cfg.n_jobs,
                        full=direct.report)
            for s, rep in ab.items():
                if s != "all":
                    rows += fold_rows("ablate", level, rep, removed=s)
                    any_conv |= rep.cr > 0
        if "null" in cfg.analyses:
            nl = _stage("null", level, shuffled_null, prob, cfg.lasso, cfg.n_shuffles, seed,
                        reference=direct.report, n_jobs=cfg.n_jobs)
            per, summ = null_rows(level, nl)
            null_per += per
            rows += summ
    reports = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    reports.to_csv(out / "reports.csv", index=False, float_format=FLOAT_FMT)
    if null_per:
        write_csv(out / "null.csv", null_per, ["level", "shuffle", "q2", "mae_stdzd", "cr"])
    manifest = _manifest(cfg, out)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(out, reports, any_conv, manifest)


def _stage(name, level, fn, *args, **kw):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return fn(*args, **kw)
    except Exception as exc:
        raise StageError(f"{name}[{level}]", exc) from exc


def _manifest(cfg: RunConfig, out: Path) -> dict:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    inputs = {}
    for key in ("features", "scores"):
        path = getattr(cfg, key)
        if path is not None:
            inputs[key] = _sha256(Path(path))
    if cfg.dataset is not None:
        h = hashlib.sha256()
        root = Path(cfg.dataset)
        for p in sorted(root.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(root)).encode())
                h.update(_sha256(p).encode())
        inputs["dataset"] = h.hexdigest()
    return {"config": cfg.to_dict(), "config_hash": cfg.digest(), "seed": cfg.seed,
            "versions": _versions(), "inputs": inputs,
            "outputs": {str(p.relative_to(out)): _sha256(p) for p in files}}


def rerun_from_manifest(path: str | Path, out: str | Path | None = None) -> RunResult:
    """Repeat a run from its manifest (optionally into another directory)."""
    doc = json.loads(Path(path).read_text())
    cfg = RunConfig.from_mapping(doc["config"])
    if out is not None:
        cfg = replace(cfg, out=str(out))
    return run_pipeline(cfg)


__all__ = ["RunConfig", "RunResult", "StageError", "run_pipeline", "rerun_from_manifest", "ANALYSES",
           "DataQualityWarning"]
