"""Data model, on-disk loading, epoch slicing, baselining and imputation.

On-disk layout::

    <root>/<participant>/signals/<modality>.csv   t,<ch1>,<ch2>,...
    <root>/<participant>/events.csv               t,kind,payload_json
    <root>/<participant>/responses.csv            trial,question_id,level,correct
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

FLOAT_FMT = "%.17g"

PRE_TRIAL_S = 30.0
FINAL_S = 20.0
PRE_EXPERIMENT_S = 120.0
DIV_EPS = 1e-12


class DataQualityWarning(UserWarning):
    """Recoverable data problem (clipped epoch, dropped sample, sorted events...)."""


class DatasetError(ValueError):
    pass


class Modality(str, Enum):
    ECG = "ecg"
    RSP = "rsp"
    EDA = "eda"
    EEG = "eeg"
    FNIRS = "fnirs"
    EYE = "eye"


SENSORS = tuple(m.value for m in Modality)


class EpochKind(str, Enum):
    PreExperimentBaseline = "PreExperimentBaseline"
    PreTrialBaseline = "PreTrialBaseline"
    FullTrial = "FullTrial"
    Final20s = "Final20s"


class Variant(str, Enum):
    Raw = "Raw"
    Standardized = "Standardized"
    MinusPreTrial = "MinusPreTrial"
    DivPreTrial = "DivPreTrial"
    MinusPreExp = "MinusPreExp"
    DivPreExp = "DivPreExp"


# ---------------------------------------------------------------------------
# signals and events


@dataclass(frozen=True, eq=False)
class SignalTrace:
    """One modality's multichannel recording.

    ``samples`` is channels x time. ``missing`` flags samples that were
    absent in the source file; they are linearly interpolated on
    construction so that ``samples`` never contains NaN.
    """

    modality: Modality
    channels: tuple[str, ...]
    fs: float
    samples: np.ndarray
    t0: float = 0.0
    missing: np.ndarray | None = None

    def __post_init__(self):
        if not self.fs > 0:
            raise DatasetError(f"{self.modality}: sampling rate must be > 0, got {self.fs}")
        samples = self.samples
        if isinstance(samples, (list, tuple)):
            lengths = {len(ch) for ch in samples}
            if len(lengths) > 1:
                raise DatasetError(f"{self.modality}: ragged channels (lengths {sorted(lengths)})")
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[0] != len(self.channels):
            raise DatasetError(
                f"{self.modality}: {samples.shape[0]} sample rows for {len(self.channels)} channels"
            )
        nan = ~np.isfinite(samples)
        missing = nan if self.missing is None else (np.asarray(self.missing, bool) | nan)
        if nan.any():
            samples = samples.copy()
            idx = np.arange(samples.shape[1])
            for row, bad in zip(samples, nan):
                if bad.all():
                    raise DatasetError(f"{self.modality}: channel has no valid samples")
                if bad.any():
                    row[bad] = np.interp(idx[bad], idx[~bad], row[~bad])
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "missing", missing)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.fs

    @property
    def t_end(self) -> float:
        return self.t0 + self.n_samples / self.fs

    def channel(self, name: str) -> np.ndarray:
        return self.samples[self.channels.index(name)]

    def window(self, start: float, end: float) -> np.ndarray:
        """Sample indices with ``start <= t < end``."""
        i0 = max(0, int(math.ceil((start - self.t0) * self.fs - 1e-9)))
        i1 = min(self.n_samples, int(math.ceil((end - self.t0) * self.fs - 1e-9)))
        return np.arange(i0, max(i0, i1))


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    payload: Mapping = field(default_factory=dict)


class EventStream:
    """Time-sorted task events: trial bounds, fixations, blinks, questions."""

    REQUIRED = ("trial-start", "trial-end")

    def __init__(self, events: Iterable[Event], *, source: str = "events"):
        events = list(events)
        times = [e.t for e in events]
        if any(b < a for a, b in zip(times, times[1:])):
            warnings.warn(f"{source}: events out of order, sorted by time", DataQualityWarning)
            events = sorted(events, key=lambda e: e.t)
        for e in events:
            if e.kind in ("fixation", "blink") and not float(e.payload.get("duration", 0)) > 0:
                raise DatasetError(f"{source}: {e.kind} at t={e.t} has non-positive duration")
        self.events: tuple[Event, ...] = tuple(events)
        self._trials = self._pair_trials(source)

    def _pair_trials(self, source):
        trials = []
        open_start = None
        n = 0
        for e in self.events:
            if e.kind == "trial-start":
                if open_start is not None:
                    raise DatasetError(f"{source}: nested trial-start at t={e.t}")
                open_start = e
            elif e.kind == "trial-end":
                if open_start is None:
                    raise DatasetError(f"{source}: trial-end at t={e.t} without a trial-start")
                n += 1
                idx = int(open_start.payload.get("trial", n))
                trials.append((idx, open_start.t, e.t))
                open_start = None
        if open_start is not None:
            raise DatasetError(f"{source}: trial starting at t={open_start.t} never ends")
        return trials

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    @property
    def trials(self) -> list[tuple[int, float, float]]:
        """(trial index, start, end) per trial, in time order."""
        return list(self._trials)

    @property
    def experiment_start(self) -> float | None:
        ev = self.of_kind("experiment-start")
        return ev[0].t if ev else None

    def fixations(self) -> np.ndarray:
        """Array of (onset, duration, x, y) rows."""
        rows = [(e.t, float(e.payload["duration"]), float(e.payload.get("x", np.nan)),
                 float(e.payload.get("y", np.nan))) for e in self.of_kind("fixation")]
        return np.asarray(rows, dtype=float).reshape(-1, 4)

    def blinks(self) -> np.ndarray:
        """Array of (onset, duration) rows."""
        rows = [(e.t, float(e.payload["duration"])) for e in self.of_kind("blink")]
        return np.asarray(rows, dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.events)


@dataclass(frozen=True)
class Response:
    trial: int
    question_id: str
    level: int
    correct: bool


@dataclass
class Participant:
    pid: str
    traces: dict[Modality, SignalTrace]
    events: EventStream
    responses: list[Response]


@dataclass
class Dataset:
    participants: dict[str, Participant]

    def trial_records(self) -> list[tuple[str, int, float, float]]:
        return [(pid, idx, s, e) for pid, p in self.participants.items()
                for idx, s, e in p.events.trials]

    def responses(self) -> list[tuple[str, Response]]:
        return [(pid, r) for pid, p in self.participants.items() for r in p.responses]


# ---------------------------------------------------------------------------
# CSV io


def _numeric_frame(path: Path) -> pd.DataFrame:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise DatasetError(f"{path}: malformed CSV ({exc})") from exc
    out = {}
    for col in raw.columns:
        text = raw[col].str.strip()
        num = pd.to_numeric(text.where(text != "", None), errors="coerce")
        exact = num.notna()
        num[exact] = text[exact].map(float)  # to_numeric is not round-trip exact
        bad = num.isna() & (text != "") & ~text.str.lower().isin(["nan", "na", "n/a"])
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DatasetError(
                f"{path}: malformed CSV row at line {row + 2}: column {col!r} value {text.iloc[row]!r}"
            )
        out[col] = num.to_numpy(dtype=float)
    return pd.DataFrame(out, columns=raw.columns)


def read_trace(path: str | Path, modality: Modality | str | None = None) -> SignalTrace:
    path = Path(path)
    modality = Modality(modality or path.stem.lower())
    df = _numeric_frame(path)
    if df.columns[0] != "t":
        raise DatasetError(f"{path}: first column must be 't'")
    values = df.iloc[:, 1:].to_numpy(dtype=float).T
    t = df["t"].to_numpy()
    # a channel whose tail is empty while others continue is ragged, not missing
    valid_len = [int(np.flatnonzero(np.isfinite(row))[-1]) + 1 if np.isfinite(row).any() else 0
                 for row in values]
    if len(set(valid_len)) > 1:
        raise DatasetError(f"{path}: ragged channels (lengths {sorted(set(valid_len))})")
    if not np.all(np.isfinite(t)):
        raise DatasetError(f"{path}: missing time stamps")
    dt = np.diff(t)
    if len(dt) == 0 or np.any(dt <= 0):
        raise DatasetError(f"{path}: time column must increase monotonically")
    step = float(np.median(dt))
    if np.max(np.abs(dt - step)) > 0.01 * step:
        raise DatasetError(f"{path}: time column is not sampled at a fixed rate")
    return SignalTrace(modality, tuple(df.columns[1:]), 1.0 / step, values, t0=float(t[0]))


def write_trace(path: str | Path, trace: SignalTrace) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.vstack([trace.times, trace.samples]).T
    np.savetxt(path, data, delimiter=",", fmt=FLOAT_FMT,
               header=",".join(("t",) + trace.channels), comments="")


def read_events(path: str | Path) -> EventStream:
    path = Path(path)
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "kind", "payload_json"]:
            raise DatasetError(f"{path}: expected header t,kind,payload_json, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DatasetError(f"{path}: malformed CSV row at line {line_no}: {row}")
            try:
                t = float(row[0])
                payload = json.loads(row[2]) if row[2].strip() else {}
            except (ValueError, json.JSONDecodeError) as exc:
                raise DatasetError(f"{path}: malformed CSV row at line {line_no}: {exc}") from exc
            events.append(Event(t, row[1].strip(), payload))
    return EventStream(events, source=str(path))


def write_events(path: str | Path, events: EventStream | Sequence[Event]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    evs = events.events if isinstance(events, EventStream) else events
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "payload_json"])
        for e in evs:
            w.writerow([FLOAT_FMT % e.t, e.kind, json.dumps(dict(e.payload), sort_keys=True)])


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "y", "t"):
        return True
    if t in ("0", "false", "no", "n", "f"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_responses(path: str | Path) -> list[Response]:
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["trial", "question_id", "level", "correct"]:
            raise DatasetError(f"{path}: expected header trial,question_id,level,correct")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                trial, qid, level, correct = row
                out.append(Response(int(trial), qid.strip(), int(level), _parse_bool(correct)))
            except ValueError as exc:
                raise DatasetError(f"{path}: malformed CSV row at line {line_no}: {exc}") from exc
    return out


def write_responses(path: str | Path, responses: Sequence[Response]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "question_id", "level", "correct"])
        for r in responses:
            w.writerow([r.trial, r.question_id, r.level, int(r.correct)])


def load_dataset(root: str | Path) -> Dataset:
    """Load every participant directory under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    participants = {}
    for pdir in sorted(p for p in root.iterdir() if p.is_dir()):
        pid = pdir.name
        ev_path = pdir / "events.csv"
        if not ev_path.exists():
            warnings.warn(f"{pdir}: no events.csv, directory ignored", DataQualityWarning)
            continue
        events = read_events(ev_path)
        kinds = {e.kind for e in events.events}
        missing = [k for k in EventStream.REQUIRED if k not in kinds]
        if missing:
            raise DatasetError(f"participant {pid}: missing mandatory events {missing}")
        traces = {}
        sig_dir = pdir / "signals"
        if sig_dir.is_dir():
            for f in sorted(sig_dir.iterdir()):
                try:
                    modality = Modality(f.stem.lower())
                except ValueError:
                    modality = None
                if f.suffix != ".csv" or modality is None:
                    warnings.warn(f"{f}: unknown signal file ignored", DataQualityWarning)
                    continue
                traces[modality] = read_trace(f, modality)
        resp_path = pdir / "responses.csv"
        responses = read_responses(resp_path) if resp_path.exists() else []
        for f in pdir.iterdir():
            if f.is_file() and f.name not in ("events.csv", "responses.csv"):
                warnings.warn(f"{f}: unknown file ignored", DataQualityWarning)
        participants[pid] = Participant(pid, traces, events, responses)
    return Dataset(participants)


# ---------------------------------------------------------------------------
# epochs


@dataclass(frozen=True)
class EpochWindow:
    kind: EpochKind
    start: float
    end: float
    trial: int | None = None

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"epoch {self.kind.value}: end {self.end} <= start {self.start}")

    @property
    def length(self) -> float:
        return self.end - self.start


def slice_epochs(events: EventStream, recording_start: float | None = None) -> list[EpochWindow]:
    """Cut the four epoch kinds out of the event timeline.

    Per trial: FullTrial [start, end], Final20s [end-20, end], PreTrialBaseline
    [start-30, start]; plus one PreExperimentBaseline of 120 s from
    experiment-start. Windows that would cross the trial start or the
    recording start are clipped with a DataQualityWarning.
    """
    exp_start = events.experiment_start
    if exp_start is None:
        raise DatasetError("no experiment-start event")
    if not events.trials:
        raise DatasetError("no trial boundaries")
    out = [EpochWindow(EpochKind.PreExperimentBaseline, exp_start, exp_start + PRE_EXPERIMENT_S)]
    for idx, start, end in events.trials:
        out.append(EpochWindow(EpochKind.FullTrial, start, end, idx))
        f_start = end - FINAL_S
        if f_start < start:
            warnings.warn(f"trial {idx}: shorter than {FINAL_S:g} s, Final20s clipped to trial start",
                          DataQualityWarning)
            f_start = start
        out.append(EpochWindow(EpochKind.Final20s, f_start, end, idx))
        b_start = start - PRE_TRIAL_S
        if recording_start is not None and b_start < recording_start:
            warnings.warn(f"trial {idx}: pre-trial baseline clipped at recording start",
                          DataQualityWarning)
            b_start = recording_start
        if start > b_start:
            out.append(EpochWindow(EpochKind.PreTrialBaseline, b_start, start, idx))
        else:
            warnings.warn(f"trial {idx}: no pre-trial baseline available", DataQualityWarning)
    return out


# ---------------------------------------------------------------------------
# feature keys and matrices


@dataclass(frozen=True, order=True)
class FeatureKey:
    sensor: str
    channel: str
    feature: str
    epoch: EpochKind
    variant: Variant = Variant.Raw

    def __post_init__(self):
        object.__setattr__(self, "epoch", EpochKind(self.epoch))
        object.__setattr__(self, "variant", Variant(self.variant))
        for part in (self.sensor, self.channel, self.feature):
            if not part or "." in part or "," in part:
                raise ValueError(f"invalid feature key component {part!r}")

    def __str__(self):
        return f"{self.sensor}.{self.channel}.{self.feature}.{self.epoch.value}.{self.variant.value}"

    @classmethod
    def parse(cls, text: str) -> "FeatureKey":
        parts = text.strip().split(".")
        if len(parts) != 5:
            raise ValueError(f"feature key needs 5 dot-separated parts: {text!r}")
        return cls(*parts)

    @property
    def base(self) -> str:
        """``sensor.channel.feature`` without epoch/variant."""
        return f"{self.sensor}.{self.channel}.{self.feature}"


@dataclass
class FeatureMatrix:
    """Trials x features grid; NaN marks a missing value."""

    rows: list[tuple[str, int]]
    columns: list[FeatureKey]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.rows), len(self.columns)):
            raise ValueError(f"values shape {self.values.shape} != "
                             f"({len(self.rows)}, {len(self.columns)})")
        if len(set(self.rows)) != len(self.rows):
            raise ValueError("duplicate rows in feature matrix")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate columns in feature matrix")

    @property
    def participants(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def trials(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def sensors(self) -> np.ndarray:
        return np.array([c.sensor for c in self.columns])

    def column(self, key: FeatureKey | str) -> np.ndarray:
        key = FeatureKey.parse(key) if isinstance(key, str) else key
        return self.values[:, self.columns.index(key)]

    def select_columns(self, mask) -> "FeatureMatrix":
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return FeatureMatrix(list(self.rows), [self.columns[i] for i in idx], self.values[:, idx])

    def select_rows(self, rows: Sequence[tuple[str, int]]) -> "FeatureMatrix":
        pos = {r: i for i, r in enumerate(self.rows)}
        idx = [pos[r] for r in rows]
        return FeatureMatrix(list(rows), list(self.columns), self.values[idx])

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["participant", "trial"] + [str(c) for c in self.columns])
            for (pid, trial), vals in zip(self.rows, self.values):
                w.writerow([pid, trial] + ["" if not np.isfinite(v) else FLOAT_FMT % v for v in vals])

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        path = Path(path)
        df = pd.read_csv(path, dtype={"participant": str}, float_precision="round_trip")
        if list(df.columns[:2]) != ["participant", "trial"]:
            raise DatasetError(f"{path}: first columns must be participant,trial")
        cols = [FeatureKey.parse(c) for c in df.columns[2:]]
        rows = list(zip(df["participant"].astype(str), df["trial"].astype(int)))
        return cls(rows, cols, df.iloc[:, 2:].to_numpy(dtype=float))


# ---------------------------------------------------------------------------
# baselining and imputation


def _zscore(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    out = np.full(values.shape, np.nan)
    if ok.sum() < 2:
        out[ok] = 0.0
        return out
    mu = values[ok].mean()
    sd = values[ok].std(ddof=1)
    out[ok] = 0.0 if sd == 0 else (values[ok] - mu) / sd
    return out


def _safe_div(v, b):
    v = np.asarray(v, dtype=float)
    b = np.broadcast_to(np.asarray(b, dtype=float), v.shape)
    out = np.full(v.shape, np.nan)
    ok = np.isfinite(b) & (np.abs(b) >= DIV_EPS)
    out[ok] = v[ok] / b[ok]
    return out


def apply_baselines(v, b_t, b_e, column=None) -> dict[Variant, np.ndarray | float]:
    """All six variants of a feature value.

    ``v`` may be a scalar or an array of one participant's trials. The
    Standardized variant z-scores against ``column`` (defaults to ``v``)
    with the sample SD; a zero SD gives 0. Division by a baseline smaller
    than 1e-12 in magnitude yields NaN (missing), never an infinity.
    """
    scalar = np.ndim(v) == 0
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    if column is None:
        std = _zscore(v_arr)
    else:
        col = np.asarray(column, dtype=float)
        ok = col[np.isfinite(col)]
        sd = ok.std(ddof=1) if len(ok) > 1 else 0.0
        std = np.zeros_like(v_arr) if sd == 0 else (v_arr - ok.mean()) / sd
    b_t = np.asarray(b_t, dtype=float)
    b_e = np.asarray(b_e, dtype=float)
    out = {
        Variant.Raw: v_arr,
        Variant.Standardized: std,
        Variant.MinusPreTrial: v_arr - b_t,
        Variant.DivPreTrial: _safe_div(v_arr, b_t),
        Variant.MinusPreExp: v_arr - b_e,
        Variant.DivPreExp: _safe_div(v_arr, b_e),
    }
    if scalar:
        return {k: float(np.asarray(val).reshape(-1)[0]) for k, val in out.items()}
    return {k: np.broadcast_to(val, v_arr.shape).astype(float) for k, val in out.items()}


def _fill_within(values: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Linear interpolation over trial index, nearest-value at the edges."""
    y = values.copy()
    ok = np.isfinite(y)
    if ok.all() or not ok.any():
        return y
    y[~ok] = np.interp(order[~ok], order[ok], y[ok])  # np.interp holds edge values constant
    return y


def impute_features(fm: FeatureMatrix, k: int = 12) -> FeatureMatrix:
    """Fill missing values.

    Within a participant, gaps are linearly interpolated over trial index
    (edges take the nearest available value). A column missing for all of a
    participant's trials is filled per row with the mean of that column over
    the ``k`` nearest rows, by Euclidean distance on the z-scored columns
    both rows share.
    """
    X = fm.values.copy()
    all_missing = ~np.isfinite(X).any(axis=0)
    if all_missing.any():
        bad = [str(fm.columns[i]) for i in np.flatnonzero(all_missing)[:5]]
        raise DatasetError(f"columns missing for every row (feature unusable): {bad}")
    pids = fm.participants
    trials = fm.trials.astype(float)
    groups = {p: np.flatnonzero(pids == p) for p in dict.fromkeys(pids)}
    for rows in groups.values():
        order = trials[rows]
        block = X[rows]
        for j in np.flatnonzero(~np.isfinite(block).all(axis=0)):
            block[:, j] = _fill_within(block[:, j], order)
        X[rows] = block
    holes = ~np.isfinite(X)
    if holes.any():
        Z = np.column_stack([_zscore(X[:, j]) for j in range(X.shape[1])])
        for r in np.flatnonzero(holes.any(axis=1)):
            shared = np.isfinite(Z[r])
            diff = Z[:, shared] - Z[r, shared]
            d2 = np.where(np.isfinite(diff), diff * diff, 0.0).sum(axis=1)
            for j in np.flatnonzero(holes[r]):
                cand = np.flatnonzero(~holes[:, j])
                # stable sort: ties resolved by row order
                nearest = cand[np.argsort(d2[cand], kind="stable")[:k]]
                X[r, j] = X[nearest, j].mean()
    return FeatureMatrix(list(fm.rows), list(fm.columns), X)
