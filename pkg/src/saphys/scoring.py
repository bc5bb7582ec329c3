"""Difficulty-adjusted situation-awareness scores from freeze-probe responses."""
from __future__ import annotations

import warnings
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .dataset import FLOAT_FMT, DataQualityWarning, Response

LEVELS = (1, 2, 3)
QUESTIONS_PER_LEVEL = 6
TARGETS = ("1", "2", "3", "total")


def question_difficulty(responses: Iterable[Response], bank: Iterable[str] | None = None) -> dict[str, float]:
    """Fraction of correct answers per question over every response.

    Questions in ``bank`` that were never asked map to NaN.
    """
    hits: dict[str, int] = defaultdict(int)
    tries: dict[str, int] = defaultdict(int)
    for r in responses:
        tries[r.question_id] += 1
        hits[r.question_id] += bool(r.correct)
    out = {q: hits[q] / tries[q] for q in tries}
    for q in bank or ():
        out.setdefault(q, float("nan"))
    return out


def adjusted_level_score(responses: Iterable[Response], p: Mapping[str, float]) -> dict[int, float]:
    """Per-level sum of +(1 - p_q) for correct and -p_q for incorrect answers."""
    score = {lvl: 0.0 for lvl in LEVELS}
    skipped = []
    for r in responses:
        pq = p.get(r.question_id, float("nan"))
        if not np.isfinite(pq):
            skipped.append(r.question_id)
            continue
        score[r.level] += (1.0 - pq) if r.correct else -pq
    if skipped:
        warnings.warn(f"questions without difficulty skipped: {sorted(set(skipped))}", DataQualityWarning)
    return score


def zscore(values) -> np.ndarray:
    """Sample z-score ignoring NaN; a constant column becomes zeros with a warning."""
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v)
    out = np.full(v.shape, np.nan)
    if ok.sum() < 2:
        raise ValueError("zscore: need at least 2 values")
    sd = v[ok].std(ddof=1)
    if sd == 0:
        warnings.warn("zero-variance score column standardized to 0", DataQualityWarning)
        out[ok] = 0.0
    else:
        out[ok] = (v[ok] - v[ok].mean()) / sd
    return out


def moving_average_3(values: Sequence[float]) -> np.ndarray:
    """Centred 3-trial mean; first and last positions are NaN (dropped).

    Windows average their available values and need at least two.
    """
    v = np.asarray(values, dtype=float)
    out = np.full(len(v), np.nan)
    if len(v) < 3:
        warnings.warn("fewer than 3 trials, all dropped", DataQualityWarning)
        return out
    for i in range(1, len(v) - 1):
        w = v[i - 1:i + 2]
        w = w[np.isfinite(w)]
        if len(w) >= 2:
            out[i] = w.mean()
    return out


def score_table(responses: Mapping[str, Sequence[Response]],
                trials: Mapping[str, Sequence[int]] | None = None, *,
                total_of: str = "standardized") -> pd.DataFrame:
    """Full score table, one row per (participant, trial).

    ``responses`` maps participant to responses; ``trials`` optionally lists
    every trial per participant so that trials without responses appear as
    missing. ``total_of="adjusted"`` sums adjusted rather than standardized
    level scores.
    """
    if total_of not in ("standardized", "adjusted"):
        raise ValueError("total_of must be 'standardized' or 'adjusted'")
    everything = [r for rs in responses.values() for r in rs]
    p = question_difficulty(everything)
    rows = []
    short = set()
    for pid in responses:
        by_trial: dict[int, list[Response]] = defaultdict(list)
        for r in responses[pid]:
            by_trial[r.trial].append(r)
        tlist = sorted(set(by_trial) | set((trials or {}).get(pid, ())))
        for t in tlist:
            rs = by_trial.get(t, [])
            row = {"participant": str(pid), "trial": int(t)}
            if rs:
                adj = adjusted_level_score(rs, p)
                for lvl in LEVELS:
                    lr = [r for r in rs if r.level == lvl]
                    if len(lr) != QUESTIONS_PER_LEVEL:
                        short.add((pid, t, lvl, len(lr)))
                    row[f"level{lvl}_raw"] = float(sum(r.correct for r in lr))
                    row[f"level{lvl}_adjusted"] = adj[lvl]
            else:
                for lvl in LEVELS:
                    row[f"level{lvl}_raw"] = np.nan
                    row[f"level{lvl}_adjusted"] = np.nan
            rows.append(row)
    if short:
        warnings.warn(f"{len(short)} trial-levels without {QUESTIONS_PER_LEVEL} questions",
                      DataQualityWarning)
    df = pd.DataFrame(rows)
    if len(df) < 2:
        raise ValueError("score_table: need at least 2 trials")
    for lvl in LEVELS:
        df[f"level{lvl}_std"] = zscore(df[f"level{lvl}_adjusted"])
    src = "std" if total_of == "standardized" else "adjusted"
    df["total"] = sum(df[f"level{lvl}_{src}"] for lvl in LEVELS)
    ma_cols = [f"level{lvl}_std" for lvl in LEVELS] + ["total"]
    ma_names = [f"level{lvl}_ma3" for lvl in LEVELS] + ["total_ma3"]
    for name in ma_names:
        df[name] = np.nan
    for pid, idx in df.groupby("participant", sort=False).groups.items():
        idx = df.loc[idx].sort_values("trial").index
        for src_col, name in zip(ma_cols, ma_names):
            df.loc[idx, name] = moving_average_3(df.loc[idx, src_col].to_numpy())
    df["retained"] = df[ma_names].notna().all(axis=1)
    return df


def labels(table: pd.DataFrame, target: str | int) -> pd.Series:
    """Retained moving-averaged labels for one target, indexed by (participant, trial)."""
    target = str(target).lower()
    if target not in TARGETS:
        raise ValueError(f"unknown SA target {target!r}; expected one of {TARGETS}")
    col = "total_ma3" if target == "total" else f"level{target}_ma3"
    kept = table[table["retained"]]
    return pd.Series(kept[col].to_numpy(), index=pd.MultiIndex.from_arrays(
        [kept["participant"].astype(str), kept["trial"].astype(int)]), name=col)


def write_scores(path: str | Path, table: pd.DataFrame) -> None:
    table.to_csv(path, index=False, float_format=FLOAT_FMT)


def read_scores(path: str | Path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"participant": str}, float_precision="round_trip")
    df["retained"] = df["retained"].astype(bool)
    return df
