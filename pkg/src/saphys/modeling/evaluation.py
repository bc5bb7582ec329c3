"""Outer cross-validation, shuffled-label nulls, sensor fusion and ablation."""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .selection import LassoConfig, LinearModel, relaxed_select, select_model

N_OUTER = 5


@dataclass
class Problem:
    """Retained trials x features with labels and grouping."""

    X: np.ndarray
    y: np.ndarray
    pids: np.ndarray
    tids: np.ndarray
    names: list[str]
    sensors: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.pids = np.asarray(self.pids).astype(str)
        self.tids = np.asarray(self.tids).astype(int)
        self.sensors = np.asarray(self.sensors).astype(str)
        n, p = self.X.shape
        if not (len(self.y) == len(self.pids) == len(self.tids) == n):
            raise ValueError("Problem: row-aligned arrays differ in length")
        if not (len(self.names) == len(self.sensors) == p):
            raise ValueError("Problem: column-aligned arrays differ in length")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.y)):
            raise ValueError("Problem: missing values (impute first)")

    @classmethod
    def from_frames(cls, fm, labels: pd.Series) -> "Problem":
        """Join an imputed FeatureMatrix with labels indexed by (participant, trial)."""
        pos = {r: i for i, r in enumerate(fm.rows)}
        keys = [(str(p), int(t)) for p, t in labels.index]
        rows = [k for k in keys if k in pos]
        idx = [pos[k] for k in rows]
        y = labels.to_numpy(dtype=float)[[keys.index(k) for k in rows]]
        return cls(fm.values[idx], y, np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
                   [str(c) for c in fm.columns], np.array([c.sensor for c in fm.columns]))

    def columns_of(self, sensors) -> np.ndarray:
        return np.flatnonzero(np.isin(self.sensors, list(sensors)))

    def subset(self, cols) -> "Problem":
        cols = np.asarray(cols, dtype=np.int64)
        return Problem(self.X[:, cols], self.y, self.pids, self.tids,
                       [self.names[i] for i in cols], self.sensors[cols])

    def with_labels(self, y) -> "Problem":
        return Problem(self.X, np.asarray(y, dtype=float), self.pids, self.tids, self.names, self.sensors)


def metrics(y, yhat) -> tuple[float, float]:
    """(Q^2, MAE / SD) of predictions against truths; Q^2 uses the truths' mean."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if len(y) != len(yhat) or len(y) < 2:
        raise ValueError("metrics: need equal lengths >= 2")
    sd = y.std(ddof=1)
    if sd == 0:
        raise ValueError("metrics: truths have zero standard deviation")
    q2 = 1.0 - float(np.sum((y - yhat) ** 2)) / float(np.sum((y - y.mean()) ** 2))
    return q2, float(np.mean(np.abs(y - yhat)) / sd)


def outer_folds(pids, k: int = N_OUTER, seed=0) -> np.ndarray:
    """Participant-stratified fold labels.

    Each participant's rows are shuffled and dealt round-robin; the dealing
    position carries over between participants so folds stay balanced.
    """
    pids = np.asarray(pids).astype(str)
    rng = np.random.default_rng(_key(seed) + [0xF01D])
    fold = np.empty(len(pids), dtype=np.int64)
    pos = 0
    for p in sorted(set(pids.tolist())):
        rows = rng.permutation(np.flatnonzero(pids == p))
        fold[rows] = (pos + np.arange(len(rows))) % k
        pos += len(rows)
    return fold


def _key(seed) -> list[int]:
    return [int(s) for s in (seed if isinstance(seed, (tuple, list)) else (seed,))]


@dataclass
class Scaler:
    mean: np.ndarray
    sd: np.ndarray
    keep: np.ndarray  # columns with non-zero training spread

    @classmethod
    def fit(cls, X) -> "Scaler":
        mean = X.mean(axis=0)
        sd = X.std(axis=0, ddof=1) if len(X) > 1 else np.zeros(X.shape[1])
        return cls(mean, sd, np.flatnonzero(sd > 0))

    def transform(self, X) -> np.ndarray:
        k = self.keep
        return (np.asarray(X, dtype=float)[:, k] - self.mean[k]) / self.sd[k]


def _hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass
class FoldModel:
    """A model fitted on one training split, expressed on original columns."""

    fold: int
    scaler: Scaler
    model: LinearModel | None
    train: np.ndarray
    test: np.ndarray
    y_range: tuple[float, float]
    fingerprint: str

    @property
    def converged(self) -> bool:
        return self.model is not None

    @property
    def columns(self) -> np.ndarray:
        """Indices into the problem's columns used by the model."""
        if self.model is None:
            return np.empty(0, dtype=np.int64)
        return self.scaler.keep[list(self.model.columns)]

    def raw_predict(self, X) -> np.ndarray:
        return self.model.predict(self.scaler.transform(X))

    def predict(self, X) -> np.ndarray:
        """Predictions clamped to the training label range."""
        return np.clip(self.raw_predict(X), *self.y_range)

    def model_hash(self) -> str:
        if self.model is None:
            return "nonconverged"
        cols = self.columns
        return _hash(cols, self.model.coef, np.array([self.model.intercept]),
                     self.scaler.mean[cols], self.scaler.sd[cols])

    def raw_units(self) -> tuple[float, np.ndarray]:
        """(intercept, coefficients) for unstandardized inputs on ``columns``."""
        cols = self.columns
        b = self.model.coef / self.scaler.sd[cols]
        return float(self.model.intercept - b @ self.scaler.mean[cols]), b


def fit_fold(problem: Problem, train: np.ndarray, cfg: LassoConfig, key, fold: int = 0,
             test: np.ndarray | None = None) -> FoldModel:
    """Standardize on ``train``, screen, refit and select; nothing else is seen."""
    Xtr = problem.X[train]
    ytr = problem.y[train]
    scaler = Scaler.fit(Xtr)
    Z = scaler.transform(Xtr)
    model = None
    if Z.shape[1] and np.ptp(ytr) > 0:
        sel = relaxed_select(Z, ytr, cfg, key)
        model, _ = select_model(Z, ytr, sel.candidates, problem.pids[train], problem.tids[train], cfg.q2_gap)
    if model is not None:
        model.names = tuple(problem.names[i] for i in scaler.keep[list(model.columns)])
    return FoldModel(fold, scaler, model, np.asarray(train), np.asarray(test if test is not None else []),
                     (float(ytr.min()), float(ytr.max())),
                     _hash(np.asarray(train), ytr, scaler.mean))


@dataclass
class MetricReport:
    q2: float
    mae_stdzd: float
    cr: float
    folds: list[dict] = field(default_factory=list)

    def row(self) -> dict:
        return {"q2": self.q2, "mae_stdzd": self.mae_stdzd, "cr": self.cr}


@dataclass
class CvResult:
    report: MetricReport
    fold_models: list
    predictions: np.ndarray  # NaN where the fold did not converge
    folds: np.ndarray


def _pool(problem: Problem, preds: np.ndarray, converged: list[bool], folds: np.ndarray, details):
    ok = np.isin(folds, [k for k, c in enumerate(converged) if c])
    cr = float(np.mean(converged))
    if ok.sum() >= 2 and problem.y[ok].std(ddof=1) > 0:
        q2, mae = metrics(problem.y[ok], preds[ok])
    else:
        q2 = mae = float("nan")
    return MetricReport(q2, mae, cr, details)


def _fold_detail(k, fm_like, y_test, yhat, n_train, extra=None):
    d = {"fold": k, "n_train": int(n_train), "n_test": int(len(y_test)),
         "converged": bool(yhat is not None)}
    if yhat is not None and len(y_test) >= 2 and np.std(y_test) > 0:
        d["q2"], d["mae_stdzd"] = metrics(y_test, yhat)
    else:
        d["q2"] = d["mae_stdzd"] = float("nan")
    d.update(extra or {})
    return d


def outer_cv(problem: Problem, cfg: LassoConfig = LassoConfig(), seed=0, k: int = N_OUTER) -> CvResult:
    """Participant-stratified k-fold evaluation of the whole selection procedure.

    Held-out rows never touch standardization, screening or selection.
    Predictions are clamped to the training label range; Q^2 and MAE pool
    the held-out predictions of converged folds and CR is the share of
    converged folds.
    """
    folds = outer_folds(problem.pids, k, seed)
    preds = np.full(len(problem.y), np.nan)
    models, conv, details = [], [], []
    for f in range(k):
        train = np.flatnonzero(folds != f)
        test = np.flatnonzero(folds == f)
        fm = fit_fold(problem, train, cfg, _key(seed) + [f], f, test)
        models.append(fm)
        conv.append(fm.converged)
        yhat = fm.predict(problem.X[test]) if fm.converged else None
        if yhat is not None:
            preds[test] = yhat
        details.append(_fold_detail(f, fm, problem.y[test], yhat, len(train),
                                    {"n_predictors": len(fm.columns), "model_hash": fm.model_hash(),
                                     "fingerprint": fm.fingerprint}))
    return CvResult(_pool(problem, preds, conv, folds, details), models, preds, folds)


@dataclass
class NullResult:
    reports: list[MetricReport]
    permutations: list[np.ndarray]
    reference_q2: float | None = None

    @property
    def q2(self) -> np.ndarray:
        return np.array([r.q2 for r in self.reports])

    @property
    def mean(self) -> float:
        q = self.q2
        return float(np.nanmean(q)) if np.isfinite(q).any() else float("nan")

    @property
    def sd(self) -> float:
        q = self.q2[np.isfinite(self.q2)]
        return float(q.std(ddof=1)) if len(q) > 1 else float("nan")

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.q2 < 0))

    @property
    def n_exceeding(self) -> int | None:
        """Shuffles whose Q^2 is at least the reference (direct-model) Q^2."""
        if self.reference_q2 is None:
            return None
        return int(np.sum(self.q2 >= self.reference_q2))


def _null_one(args):
    problem, perm, cfg, seed = args
    return outer_cv(problem.with_labels(problem.y[perm]), cfg, seed).report


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, items))


def shuffled_null(problem: Problem, cfg: LassoConfig = LassoConfig(), n_shuffles: int = 50, seed=0,
                  reference: MetricReport | None = None, include_identity: bool = False,
                  n_jobs: int = 1) -> NullResult:
    """Outer CV repeated on label permutations (same folds and seeds).

    ``include_identity`` prepends the identity permutation as a control,
    which reproduces the unshuffled evaluation exactly.
    """
    n = len(problem.y)
    perms = [np.arange(n)] if include_identity else []
    perms += [np.random.default_rng(_key(seed) + [0x5EED, s]).permutation(n) for s in range(n_shuffles)]
    reports = _map(_null_one, [(problem, p, cfg, seed) for p in perms], n_jobs)
    return NullResult(reports, perms, None if reference is None else reference.q2)


@dataclass
class FusionFold:
    fold: int
    members: dict[str, FoldModel]
    weights: dict[str, float]
    y_range: tuple[float, float]

    @property
    def converged(self) -> bool:
        return any(w > 0 for w in self.weights.values())

    def predict(self, X) -> np.ndarray:
        out = np.zeros(len(X))
        for s, w in self.weights.items():
            if w > 0:
                out += w * self.members[s].raw_predict(X)
        return np.clip(out, *self.y_range)


def fusion_weights(r2: dict[str, float | None]) -> dict[str, float]:
    """Training-R^2 weights normalized over converged members (None = not converged)."""
    tot = sum(v for v in r2.values() if v is not None and v > 0)
    if tot <= 0:
        ok = [s for s, v in r2.items() if v is not None]
        return {s: (1.0 / len(ok) if s in ok else 0.0) for s in r2}
    return {s: (v / tot if v is not None and v > 0 else 0.0) for s, v in r2.items()}


@dataclass
class FusionResult:
    report: MetricReport
    folds: list[FusionFold]
    predictions: np.ndarray


def sensor_fusion(problem: Problem, cfg: LassoConfig = LassoConfig(), seed=0,
                  sensors: Sequence[str] | None = None, k: int = N_OUTER) -> FusionResult:
    """Per-sensor models in each outer fold, combined by training R^2 weights."""
    sensors = list(sensors) if sensors is not None else sorted(set(problem.sensors.tolist()))
    folds = outer_folds(problem.pids, k, seed)
    preds = np.full(len(problem.y), np.nan)
    out, conv, details = [], [], []
    for f in range(k):
        train = np.flatnonzero(folds != f)
        test = np.flatnonzero(folds == f)
        members, r2 = {}, {}
        for si, s in enumerate(sensors):
            cols = problem.columns_of([s])
            if len(cols) == 0:
                continue
            sub = problem.subset(cols)
            fm = fit_fold(sub, train, cfg, _key(seed) + [f, 1000 + si], f, test)
            members[s] = _Remapped(fm, cols)
            r2[s] = fm.model.r2 if fm.converged else None
        w = fusion_weights(r2) if r2 else {}
        ff = FusionFold(f, members, w, (float(problem.y[train].min()), float(problem.y[train].max())))
        out.append(ff)
        conv.append(ff.converged)
        yhat = ff.predict(problem.X[test]) if ff.converged else None
        if yhat is not None:
            preds[test] = yhat
        details.append(_fold_detail(f, ff, problem.y[test], yhat, len(train),
                                    {f"weight_{s}": v for s, v in w.items()}))
    return FusionResult(_pool(problem, preds, conv, folds, details), out, preds)


class _Remapped:
    """A sensor model evaluated on full-width design rows."""

    def __init__(self, fm: FoldModel, cols: np.ndarray):
        self.fm = fm
        self.cols = cols

    @property
    def model(self):
        return self.fm.model

    @property
    def converged(self):
        return self.fm.converged

    def raw_predict(self, X):
        return self.fm.raw_predict(np.asarray(X)[:, self.cols])

    def model_hash(self):
        return self.fm.model_hash()


def _ablate_one(args):
    problem, s, cfg, seed = args
    keep = np.flatnonzero(problem.sensors != s)
    return s, outer_cv(problem.subset(keep), cfg, seed).report


def ablation(problem: Problem, cfg: LassoConfig = LassoConfig(), seed=0, n_jobs: int = 1,
             full: MetricReport | None = None) -> dict[str, MetricReport]:
    """Outer CV with each sensor's columns removed in turn; key "all" is the full set."""
    sensors = sorted(set(problem.sensors.tolist()))
    if len(sensors) < 2:
        raise ValueError("ablation needs at least 2 sensors")
    res = {"all": full if full is not None else outer_cv(problem, cfg, seed).report}
    for s, rep in _map(_ablate_one, [(problem, s, cfg, seed) for s in sensors], n_jobs):
        res[s] = rep
    return res


def quick_config(**kw) -> LassoConfig:
    """Smaller run counts for smoke runs; the defaults are the full procedure."""
    return replace(LassoConfig(), **{"runs": 10, **kw})
