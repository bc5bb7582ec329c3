"""Blink, pupil and fixation descriptives and recurrence analysis of fixations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import EpochWindow

NAN = float("nan")


def eye_basic_features(fixations, blinks, epoch: EpochWindow, pupil_times=None,
                       pupil=None) -> dict[str, float]:
    """Per-epoch blink rate (/min), mean blink and fixation durations (s), mean pupil.

    ``fixations`` rows are (onset, duration, x, y), ``blinks`` rows (onset,
    duration); events count when their onset lies in the epoch. Pupil
    samples inside a blink or non-positive (vendor zero fill) are ignored.
    """
    fixations = np.asarray(fixations, dtype=float).reshape(-1, 4)
    blinks = np.asarray(blinks, dtype=float).reshape(-1, 2)
    lo, hi = epoch.start, epoch.end
    b = blinks[(blinks[:, 0] >= lo) & (blinks[:, 0] < hi)]
    f = fixations[(fixations[:, 0] >= lo) & (fixations[:, 0] < hi)]
    out = {
        "blink_rate": 60.0 * len(b) / epoch.length,
        "blink_duration": float(b[:, 1].mean()) if len(b) else NAN,
        "fixation_duration": float(f[:, 1].mean()) if len(f) else NAN,
        "pupil_diameter": NAN,
    }
    if pupil is not None:
        t = np.asarray(pupil_times, dtype=float)
        p = np.asarray(pupil, dtype=float)
        keep = (t >= lo) & (t < hi) & np.isfinite(p) & (p > 0)
        for onset, dur in blinks:
            keep &= ~((t >= onset) & (t < onset + dur))
        if keep.any():
            out["pupil_diameter"] = float(p[keep].mean())
    return out


@dataclass(frozen=True)
class RqaMetrics:
    recurrence: float
    determinism: float
    laminarity: float
    entropy: float
    mean_line_length: float
    corm: float

    FIELDS = ("recurrence", "determinism", "laminarity", "entropy", "mean_line_length", "corm")

    def as_dict(self):
        return {f: getattr(self, f) for f in self.FIELDS}


def _runs(mask: np.ndarray) -> np.ndarray:
    """Lengths of the runs of True in a 1-d boolean array."""
    if not mask.any():
        return np.empty(0, int)
    d = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return np.flatnonzero(d == -1) - np.flatnonzero(d == 1)


def recurrence_matrix(xy, radius: float) -> np.ndarray:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    r = d <= radius
    np.fill_diagonal(r, False)
    return r


def rqa(xy, radius: float = 64.0, min_line: int = 2) -> RqaMetrics:
    """Recurrence quantification of a fixation sequence (upper-triangle convention).

    With R recurrent pairs among N fixations: recurrence = 100 * 2R/(N(N-1));
    determinism is the share of recurrent points on diagonal lines of length
    >= ``min_line``; laminarity the mean share on horizontal and vertical
    lines; entropy the Shannon entropy (nats) of the diagonal line lengths;
    corm the lag-weighted centre of recurrence mass. Metrics normalised by
    R are missing when R = 0.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    n = len(xy)
    if n < 2:
        raise ValueError("rqa: need at least 2 fixations")
    r = np.triu(recurrence_matrix(xy, radius), k=1)
    R = int(r.sum())
    rec = 100.0 * 2.0 * R / (n * (n - 1))
    if R == 0:
        return RqaMetrics(rec, NAN, NAN, NAN, NAN, NAN)
    diag = np.concatenate([_runs(np.diagonal(r, k)) for k in range(1, n)])
    diag = diag[diag >= min_line]
    horiz = np.concatenate([_runs(r[i, i + 1:]) for i in range(n - 1)])
    vert = np.concatenate([_runs(r[:j, j]) for j in range(1, n)])
    hl = horiz[horiz >= min_line].sum()
    vl = vert[vert >= min_line].sum()
    det = 100.0 * diag.sum() / R
    lam = 100.0 * (hl + vl) / (2.0 * R)
    if len(diag):
        _, counts = np.unique(diag, return_counts=True)
        p = counts / counts.sum()
        ent = float(-(p * np.log(p)).sum())
        mll = float(diag.mean())
    else:
        ent = NAN
        mll = NAN
    i, j = np.nonzero(r)
    corm = 100.0 * float((j - i).sum()) / ((n - 1) * R)
    return RqaMetrics(rec, float(det), float(lam), ent, mll, corm)


def detect_fixations(t, x, y, max_dispersion: float = 1.0, min_duration: float = 0.1) -> np.ndarray:
    """Dispersion-threshold fixation detection on raw gaze samples.

    A window spanning ``min_duration`` whose dispersion (max x - min x) +
    (max y - min y) stays within ``max_dispersion`` starts a fixation, which
    then grows sample by sample while the dispersion holds; otherwise the
    window slides one sample. Samples with missing gaze end a window.
    Returns rows of (onset, duration, mean x, mean y).
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(t)
    if n < 2:
        return np.empty((0, 4))
    dt = float(np.median(np.diff(t)))
    span = min_duration - dt - 1e-9 * dt  # window of at least min_duration including the last sample
    ok = np.isfinite(x) & np.isfinite(y)

    def disp(a, b):
        return np.ptp(x[a:b + 1]) + np.ptp(y[a:b + 1])

    out = []
    i = 0
    while i < n:
        j = int(np.searchsorted(t, t[i] + span, side="left"))
        if j >= n:
            break
        if not ok[i:j + 1].all():
            i += int(np.flatnonzero(~ok[i:j + 1])[-1]) + 1
            continue
        if disp(i, j) > max_dispersion:
            i += 1
            continue
        while j + 1 < n and ok[j + 1] and disp(i, j + 1) <= max_dispersion:
            j += 1
        out.append((t[i], t[j] - t[i] + dt, x[i:j + 1].mean(), y[i:j + 1].mean()))
        i = j + 1
    return np.asarray(out, dtype=float).reshape(-1, 4)
