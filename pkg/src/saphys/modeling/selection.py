"""Two-stage relaxed lasso screening, OLS refits and overfitting checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lasso import TOL, lambda_grid, lasso_cv_lambdas, lasso_path


@dataclass(frozen=True)
class LassoConfig:
    n_lambda: int = 100
    decades: float = 4.0
    cv_folds: int = 10
    runs: int = 50
    max_predictors: int = 40
    q2_gap: float = 0.2
    tol: float = TOL

    def __post_init__(self):
        if self.runs < 1 or self.max_predictors < 1:
            raise ValueError("runs and max_predictors must be >= 1")


def _seed(key) -> list[int]:
    return [int(k) for k in (key if isinstance(key, (tuple, list)) else (key,))]


def run_rng(key, stage: int, run: int) -> np.random.Generator:
    """Independent generator per (key, stage, run); order of execution is irrelevant."""
    return np.random.default_rng(_seed(key) + [stage, run])


def filter_candidates(sets, max_predictors: int) -> list[tuple[int, ...]]:
    """Drop oversized sets and duplicates; deterministic order.

    An empty set stays: it is the intercept-only model.
    """
    keep = {tuple(sorted(int(i) for i in s)) for s in sets}
    keep = [s for s in keep if len(s) <= max_predictors]
    return sorted(keep, key=lambda s: (len(s), s))


@dataclass
class Selection:
    candidates: list[tuple[int, ...]]
    union: tuple[int, ...]


def relaxed_select(X, y, cfg: LassoConfig = LassoConfig(), key=0) -> Selection:
    """Candidate feature sets from two rounds of repeated lasso cross-validation.

    Round one pools the minimum-error and one-standard-error supports of
    ``cfg.runs`` differently-folded runs. Round two repeats the runs on the
    pooled columns only and keeps the one-standard-error supports, minus
    those larger than ``cfg.max_predictors``. An empty pool yields no
    candidates at all.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = lambda_grid(X, y, cfg.n_lambda, cfg.decades)
    path = lasso_path(X, y, grid, tol=cfg.tol)
    union: set[int] = set()
    for run in range(cfg.runs):
        cv = lasso_cv_lambdas(X, y, run_rng(key, 1, run), n_folds=cfg.cv_folds, path=path, tol=cfg.tol)
        union.update(cv.set_min.tolist())
        union.update(cv.set_1se.tolist())
    cols = np.array(sorted(union), dtype=np.int64)
    if len(cols) == 0:
        return Selection([], ())
    Xu = X[:, cols]
    grid2 = lambda_grid(Xu, y, cfg.n_lambda, cfg.decades)
    path2 = lasso_path(Xu, y, grid2, tol=cfg.tol)
    sets = []
    for run in range(cfg.runs):
        cv = lasso_cv_lambdas(Xu, y, run_rng(key, 2, run), n_folds=cfg.cv_folds, path=path2, tol=cfg.tol)
        sets.append(cols[cv.set_1se])
    return Selection(filter_candidates(sets, cfg.max_predictors), tuple(cols.tolist()))


class RankDeficientError(ValueError):
    pass


@dataclass
class OlsFit:
    columns: tuple[int, ...]
    intercept: float
    coef: np.ndarray
    r2: float


def _design(X, cols):
    X = np.asarray(X, dtype=float)
    return np.column_stack([np.ones(len(X)), X[:, list(cols)]])


def ols_fit(X, y, cols: Sequence[int]) -> OlsFit:
    """Least squares with intercept on the columns ``cols`` (SVD-based solve)."""
    y = np.asarray(y, dtype=float)
    A = _design(X, cols)
    if A.shape[1] > len(y):
        raise RankDeficientError(f"{A.shape[1] - 1} predictors for {len(y)} rows")
    beta, _, rank, sv = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1] or sv[-1] <= sv[0] * 1e-10:
        raise RankDeficientError(f"design rank {rank} < {A.shape[1]} for columns {list(cols)}")
    resid = y - A @ beta
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 0.0
    return OlsFit(tuple(int(c) for c in cols), float(beta[0]), beta[1:], r2)


@dataclass
class InternalCv:
    q2_loto: float
    q2_lopo: float
    skipped_loto: int = 0
    skipped_lopo: int = 0


def _press(Q, e, groups, k):
    """Deleted residuals per group from the thin Q of the design, or None to skip."""
    out = np.full(len(e), np.nan)
    skipped = 0
    n = len(e)
    for idx in groups:
        if n - len(idx) < k:
            skipped += 1
            continue
        if len(idx) == 1:
            i = idx[0]
            m = 1.0 - Q[i] @ Q[i]
            if m < 1e-10:
                skipped += 1
                continue
            out[i] = e[i] / m
            continue
        Qg = Q[idx]
        M = np.eye(len(idx)) - Qg @ Qg.T
        if np.linalg.cond(M) > 1e10:
            skipped += 1
            continue
        out[idx] = np.linalg.solve(M, e[idx])
    return out, skipped


def _q2(y, deleted, ybar):
    ok = np.isfinite(deleted)
    if not ok.any():
        return float("nan")
    return 1.0 - float(np.sum(deleted[ok] ** 2)) / float(np.sum((y[ok] - ybar) ** 2))


def group_indices(labels) -> list[np.ndarray]:
    labels = np.asarray(labels)
    _, inv = np.unique(labels, return_inverse=True)
    return [np.flatnonzero(inv == g) for g in range(inv.max() + 1)] if len(labels) else []


def internal_cv(X, y, cols: Sequence[int], pids, tids) -> InternalCv:
    """Exact leave-one-trial-out and leave-one-participant-out Q^2 of an OLS fit.

    A trial is one (participant, trial) row. Deleted residuals come from
    the hat matrix, e_(G) = (I - H_GG)^-1 e_G, which equals refitting
    without group G. Q^2 uses the mean of all labels as the reference.
    """
    y = np.asarray(y, dtype=float)
    A = _design(X, cols)
    Q, R = np.linalg.qr(A)
    if np.abs(np.diag(R)).min() <= np.abs(np.diag(R)).max() * 1e-10:
        raise RankDeficientError("internal_cv: rank-deficient design")
    e = y - Q @ (Q.T @ y)
    ybar = y.mean()
    k = A.shape[1]
    trial_keys = np.array([f"{p}\x00{t}" for p, t in zip(pids, tids)])
    d_loto, s1 = _press(Q, e, group_indices(trial_keys), k)
    d_lopo, s2 = _press(Q, e, group_indices(np.asarray(pids).astype(str)), k)
    return InternalCv(_q2(y, d_loto, ybar), _q2(y, d_lopo, ybar), s1, s2)


@dataclass
class LinearModel:
    """OLS model on a subset of design columns (column units of that design)."""

    columns: tuple[int, ...]
    intercept: float
    coef: np.ndarray
    r2: float
    q2_loto: float
    q2_lopo: float
    converged: bool
    names: tuple[str, ...] = field(default=())

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.intercept + X[:, list(self.columns)] @ self.coef


def fit_candidate(X, y, cols, pids, tids, q2_gap: float = 0.2) -> LinearModel:
    fit = ols_fit(X, y, cols)
    cv = internal_cv(X, y, cols, pids, tids)
    ok = (np.isfinite(cv.q2_loto) and np.isfinite(cv.q2_lopo)
          and cv.q2_loto >= fit.r2 - q2_gap and cv.q2_lopo >= fit.r2 - q2_gap)
    return LinearModel(fit.columns, fit.intercept, fit.coef, fit.r2, cv.q2_loto, cv.q2_lopo, bool(ok))


def select_model(X, y, candidates, pids, tids, q2_gap: float = 0.2) -> tuple[LinearModel | None, list[LinearModel]]:
    """Best non-overfit candidate by training R^2.

    A candidate converges when both internal Q^2 values are at least
    R^2 - ``q2_gap``. Ties go to fewer predictors, then the lexicographically
    smaller column set. Rank-deficient candidates are skipped. Returns
    (best or None, all evaluated models).
    """
    evaluated = []
    for cols in candidates:
        try:
            evaluated.append(fit_candidate(X, y, cols, pids, tids, q2_gap))
        except RankDeficientError:
            continue
    ok = [m for m in evaluated if m.converged]
    if not ok:
        return None, evaluated
    best = min(ok, key=lambda m: (-m.r2, len(m.columns), m.columns))
    return best, evaluated
