"""Synthetic datasets with a planted coupling between physiology and SA."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd
from scipy import signal as sps

from .dataset import (SENSORS, Event, EventStream, FeatureKey, FeatureMatrix, Modality,
                      Response, SignalTrace, write_events, write_responses, write_trace)
from .neuro import beer_lambert_forward, extinction_matrix, fnirs_channel_label, load_montage
from .peripheral import bateman
from .scoring import LEVELS, QUESTIONS_PER_LEVEL, labels, score_table

BANK_SIZE = 91
DEFAULT_FS = {"ecg": 250.0, "rsp": 25.0, "eda": 8.0, "eeg": 128.0, "fnirs": 10.0, "eye": 60.0}
DEFAULT_COUPLING = {"eye.pupil_diameter": 1.0, "eeg.alpha": 1.0, "rsp.rate": 1.0}
COUPLABLE = ("eye.pupil_diameter", "eeg.alpha", "rsp.rate", "ecg.heart_rate", "eda.scr_rate",
             "fnirs.hbo")


def ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    """Stationary unit-variance AR(1) sequence."""
    z = np.empty(n)
    z[0] = rng.standard_normal()
    s = np.sqrt(1.0 - phi * phi)
    for i in range(1, n):
        z[i] = phi * z[i - 1] + s * rng.standard_normal()
    return z


def question_bank(rng: np.random.Generator, size: int = BANK_SIZE) -> pd.DataFrame:
    """Question ids, levels (near-equal thirds) and easiness offsets."""
    level = np.array([LEVELS[i * len(LEVELS) // size] for i in range(size)])
    easiness = np.array([1.0, 0.3, -0.3])[level - 1] + 0.7 * rng.standard_normal(size)
    return pd.DataFrame({"question_id": [f"q{i + 1:02d}" for i in range(size)],
                         "level": level, "easiness": easiness})


def simulate_responses(rng: np.random.Generator, bank: pd.DataFrame, latent: np.ndarray,
                       trials, gain: float) -> list[Response]:
    """Six questions per level per trial; P(correct) = sigmoid(gain * latent + easiness)."""
    out = []
    for z, t in zip(latent, trials):
        for lvl in LEVELS:
            pool = bank.index[bank["level"] == lvl].to_numpy()
            for q in rng.choice(pool, size=QUESTIONS_PER_LEVEL, replace=False):
                p = 1.0 / (1.0 + np.exp(-(gain * z + bank.at[q, "easiness"])))
                out.append(Response(int(t), bank.at[q, "question_id"], int(lvl), bool(rng.random() < p)))
    return out


# ---------------------------------------------------------------------------
# feature-level design


@dataclass(frozen=True)
class DesignConfig:
    """Trials x features design whose labels come from simulated freeze probes.

    Each coupling entry (sensor, feature index, latent component, gain) adds
    gain * component to that feature. The SA latent driving the answers is
    the normalized sum of the components. Every other feature is noise
    around a per-participant offset.
    """

    seed: int = 0
    n_participants: int = 31
    n_trials: int = 12
    sensors: tuple[str, ...] = SENSORS
    features_per_sensor: int = 8
    coupling: tuple[tuple[str, int, int, float], ...] = (("eeg", 0, 0, 1.0), ("eeg", 1, 0, 0.6))
    n_components: int = 1
    ar: float = 0.6
    sa_gain: float = 1.2
    participant_sd: float = 0.5
    target: str = "total"

    def __post_init__(self):
        if self.n_participants < 2 or self.n_trials < 4:
            raise ValueError("need >= 2 participants and >= 4 trials")
        for s, j, c, _ in self.coupling:
            if s not in self.sensors or not 0 <= j < self.features_per_sensor or not 0 <= c < self.n_components:
                raise ValueError(f"bad coupling entry {(s, j, c)}")


@dataclass
class SyntheticDesign:
    features: FeatureMatrix  # every trial, no missing values
    scores: pd.DataFrame
    labels: pd.Series  # retained trials only
    latent: np.ndarray  # components x rows of ``features``
    config: DesignConfig

    def problem(self):
        from .modeling.evaluation import Problem
        return Problem.from_frames(self.features, self.labels)


def synthetic_design(cfg: DesignConfig = DesignConfig()) -> SyntheticDesign:
    rng = np.random.default_rng([cfg.seed, 0xD5])
    bank = question_bank(rng)
    P, T = cfg.n_participants, cfg.n_trials
    comps = np.stack([np.concatenate([ar1(rng, T, cfg.ar) for _ in range(P)])
                      for _ in range(cfg.n_components)])
    sa = comps.sum(axis=0) / np.sqrt(cfg.n_components)
    pids = [f"P{i + 1:02d}" for i in range(P)]
    rows = [(p, t + 1) for p in pids for t in range(T)]
    responses = {p: simulate_responses(rng, bank, sa[i * T:(i + 1) * T], range(1, T + 1), cfg.sa_gain)
                 for i, p in enumerate(pids)}
    table = score_table(responses)
    cols, vals = [], []
    for s in cfg.sensors:
        for j in range(cfg.features_per_sensor):
            offs = np.repeat(cfg.participant_sd * rng.standard_normal(P), T)
            x = offs + rng.standard_normal(P * T)
            for cs, cj, cc, g in cfg.coupling:
                if (cs, cj) == (s, j):
                    x = x + g * comps[cc]
            cols.append(FeatureKey(s, "all", f"syn{j}", "FullTrial", "Raw"))
            vals.append(x)
    fm = FeatureMatrix(rows, cols, np.column_stack(vals))
    return SyntheticDesign(fm, table, labels(table, cfg.target), comps, cfg)


# ---------------------------------------------------------------------------
# full-signal dataset


@dataclass(frozen=True)
class SynthConfig:
    """Recording-level generator settings.

    ``coupling`` maps a couplable quantity to its signal-to-noise knob
    (0 disables the coupling): ``eye.pupil_diameter`` (mm per latent SD),
    ``eeg.alpha`` (alpha suppression), ``rsp.rate``, ``ecg.heart_rate``,
    ``eda.scr_rate`` and ``fnirs.hbo``.
    """

    seed: int = 0
    n_participants: int = 31
    n_trials: int = 12
    trial_s: tuple[float, float] = (90.0, 150.0)
    gap_s: float = 40.0
    ar: float = 0.6
    sa_gain: float = 1.2
    coupling: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_COUPLING))
    fs: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_FS))
    fixation_s: float = 0.3

    def __post_init__(self):
        if self.n_participants < 2:
            raise ValueError("n_participants must be >= 2")
        if self.n_trials < 4:
            raise ValueError("n_trials must be >= 4")
        if not 0 < self.trial_s[0] <= self.trial_s[1]:
            raise ValueError("trial_s must be increasing positive bounds")
        if self.gap_s < 30:
            raise ValueError("gap_s must leave room for the 30 s pre-trial baseline")
        unknown = set(self.coupling) - set(COUPLABLE)
        if unknown:
            raise ValueError(f"unknown coupling targets {sorted(unknown)}; known: {COUPLABLE}")

    @classmethod
    def from_mapping(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        if "trial_s" in d:
            d["trial_s"] = tuple(d["trial_s"])
        if "fs" in d:
            d["fs"] = {**DEFAULT_FS, **d["fs"]}
        return cls(**d)


class _Timeline:
    def __init__(self, starts, ends, latent, t_end):
        self.starts, self.ends, self.latent, self.t_end = starts, ends, latent, t_end

    def latent_at(self, t):
        """Trial latent during trials, 0 elsewhere."""
        z = np.zeros(len(t))
        for s, e, v in zip(self.starts, self.ends, self.latent):
            z[(t >= s) & (t < e)] = v
        return z


def _slow_noise(rng, n, fs, tau_s, sd):
    phi = np.exp(-1.0 / (tau_s * fs))
    e = rng.standard_normal(n) * sd * np.sqrt(1 - phi * phi)
    return sps.lfilter([1.0], [1.0, -phi], e)


def _place(n, fs, times, template, t_offset=0.0, weights=None):
    """Sum of ``template`` copies starting at each time (offset in seconds)."""
    imp = np.zeros(n)
    idx = np.round((np.asarray(times) + t_offset) * fs).astype(int)
    w = np.ones(len(idx)) if weights is None else np.asarray(weights, dtype=float)
    ok = (idx >= 0) & (idx < n)
    np.add.at(imp, idx[ok], w[ok])
    return sps.fftconvolve(imp, template)[:n]


def _ecg(rng, tl, fs, knob):
    n = int(tl.t_end * fs)
    beats, t = [], 0.3
    while t < tl.t_end:
        beats.append(t)
        z = tl.latent_at(np.array([t]))[0]
        t += 0.85 * (1 - 0.04 * knob * z) + 0.03 * rng.standard_normal()
    k = np.arange(-int(0.05 * fs), int(0.35 * fs)) / fs
    template = np.exp(-0.5 * (k / 0.01) ** 2) + 0.25 * np.exp(-0.5 * ((k - 0.25) / 0.04) ** 2)
    x = _place(n, fs, beats, template, t_offset=k[0])
    tt = np.arange(n) / fs
    x += 0.1 * np.sin(2 * np.pi * 0.2 * tt) + 0.02 * rng.standard_normal(n)
    return x[None, :], ("ECG",)


def _rsp(rng, tl, fs, knob):
    n = int(tl.t_end * fs)
    tt = np.arange(n) / fs
    rate = 15.0 + 2.0 * knob * tl.latent_at(tt) + _slow_noise(rng, n, fs, 30.0, 0.8)
    phase = 2 * np.pi * np.cumsum(rate / 60.0) / fs
    amp = 1.0 + _slow_noise(rng, n, fs, 20.0, 0.1)
    return (amp * np.sin(phase) + 0.05 * rng.standard_normal(n))[None, :], ("RSP",)


def _eda(rng, tl, fs, knob):
    n = int(tl.t_end * fs)
    tt = np.arange(n) / fs
    tonic = 4.0 + 0.3 * np.sin(2 * np.pi * tt / 600.0) + _slow_noise(rng, n, fs, 120.0, 0.2)
    rate = 4.0 / 60.0 * np.exp(0.4 * knob * tl.latent_at(tt))
    onsets = tt[rng.random(n) < rate / fs]
    amps = rng.gamma(2.0, 0.1, len(onsets))
    k = bateman(fs)
    phasic = _place(n, fs, onsets, k / k.max(), weights=amps)
    return (tonic + phasic + 0.002 * rng.standard_normal(n))[None, :], ("EDA",)


def _eeg(rng, tl, fs, knob, montage, fix_onsets):
    n = int(tl.t_end * fs)
    tt = np.arange(n) / fs
    ch = montage.electrodes
    x = np.empty((len(ch), n))
    alpha_amp = 6.0 * np.exp(-0.3 * knob * tl.latent_at(tt))
    k = np.arange(0, int(0.4 * fs)) / fs
    frp = 5.0 * np.exp(-0.5 * ((k - 0.1) / 0.02) ** 2) - 3.0 * np.exp(-0.5 * ((k - 0.17) / 0.025) ** 2)
    locked = _place(n, fs, fix_onsets, frp)
    for i, c in enumerate(ch):
        region = montage.regions[c]
        w = 1.0 if region in ("occipital", "parietal") else 0.4
        phase = 2 * np.pi * 10.0 * tt + np.cumsum(_slow_noise(rng, n, fs, 1.0, 0.05))
        x[i] = (_slow_noise(rng, n, fs, 0.05, 5.0) + 2.0 * rng.standard_normal(n)
                + w * alpha_amp * np.sin(phase) + 1.5 * np.sin(2 * np.pi * 6.0 * tt + rng.uniform(0, 6.3)))
        if c in montage.frp:
            x[i] += locked
    return x, tuple(ch)


def _fnirs(rng, tl, fs, knob, montage):
    n = int(tl.t_end * fs)
    tt = np.arange(n) / fs
    E = extinction_matrix(montage.wavelengths)
    z = tl.latent_at(tt)
    rows, names = [], []
    for ch, geo in montage.fnirs.items():
        mayer = 0.3 * np.sin(2 * np.pi * 0.1 * tt + rng.uniform(0, 2 * np.pi))
        hbo = mayer + _slow_noise(rng, n, fs, 20.0, 0.4) + 0.3 * knob * z
        hbr = -0.3 * hbo + _slow_noise(rng, n, fs, 20.0, 0.15)
        dod = beer_lambert_forward(hbo, hbr, E, geo.distance_mm, montage.dpf)
        base = rng.uniform(5e3, 2e4, 2)
        for w, d, b in zip(montage.wavelengths, dod, base):
            rows.append(b * 10.0 ** (-d) * (1 + 0.002 * rng.standard_normal(n)))
            names.append(fnirs_channel_label(ch, w))
    return np.vstack(rows), tuple(names)


def _eye_events(rng, tl, cfg):
    aoi = rng.uniform([200, 150], [1720, 930], size=(6, 2))
    fix, t = [], 0.2
    cur = rng.integers(len(aoi))
    while t < tl.t_end - 1.0:
        d = max(0.08, rng.gamma(4.0, cfg.fixation_s / 4.0))
        if rng.random() < 0.35:
            cur = rng.integers(len(aoi))
        xy = aoi[cur] + 25.0 * rng.standard_normal(2)
        fix.append((t, d, xy[0], xy[1]))
        t += d + rng.uniform(0.02, 0.06)
    blinks, t = [], 0.5
    while True:
        t += rng.exponential(60.0 / 15.0)
        if t > tl.t_end - 1.0:
            break
        blinks.append((t, rng.uniform(0.1, 0.3)))
    return np.array(fix), np.array(blinks)


def _pupil(rng, tl, fs, knob, blinks):
    n = int(tl.t_end * fs)
    tt = np.arange(n) / fs
    p = 3.5 + 0.25 * knob * tl.latent_at(tt) + _slow_noise(rng, n, fs, 10.0, 0.08) + 0.02 * rng.standard_normal(n)
    for on, d in blinks:
        p[(tt >= on) & (tt < on + d)] = 0.0
    return p[None, :], ("pupil",)


def generate_participant(cfg: SynthConfig, rng: np.random.Generator, bank: pd.DataFrame, montage):
    """(traces, events, responses, latent per trial) for one participant."""
    latent = ar1(rng, cfg.n_trials, cfg.ar)
    starts, ends = [], []
    t = 120.0 + cfg.gap_s
    for _ in range(cfg.n_trials):
        starts.append(round(t, 3))
        t += rng.uniform(*cfg.trial_s)
        ends.append(round(t, 3))
        t += cfg.gap_s
    tl = _Timeline(np.array(starts), np.array(ends), latent, ends[-1] + 10.0)
    knob = {k: float(cfg.coupling.get(k, 0.0)) for k in COUPLABLE}
    fix, blinks = _eye_events(rng, tl, cfg)
    traces = {}
    for mod, (x, ch) in {
        Modality.ECG: _ecg(rng, tl, cfg.fs["ecg"], knob["ecg.heart_rate"]),
        Modality.RSP: _rsp(rng, tl, cfg.fs["rsp"], knob["rsp.rate"]),
        Modality.EDA: _eda(rng, tl, cfg.fs["eda"], knob["eda.scr_rate"]),
        Modality.EEG: _eeg(rng, tl, cfg.fs["eeg"], knob["eeg.alpha"], montage, fix[:, 0]),
        Modality.FNIRS: _fnirs(rng, tl, cfg.fs["fnirs"], knob["fnirs.hbo"], montage),
        Modality.EYE: _pupil(rng, tl, cfg.fs["eye"], knob["eye.pupil_diameter"], blinks),
    }.items():
        traces[mod] = SignalTrace(mod, ch, cfg.fs[mod.value], x)
    events = [Event(0.0, "experiment-start", {})]
    for i, (s, e) in enumerate(zip(starts, ends), start=1):
        events += [Event(s, "trial-start", {"trial": i}), Event(e, "trial-end", {"trial": i})]
    events += [Event(float(o), "fixation", {"duration": float(d), "x": float(x), "y": float(y)})
               for o, d, x, y in fix]
    events += [Event(float(o), "blink", {"duration": float(d)}) for o, d in blinks]
    events.sort(key=lambda e: e.t)
    responses = simulate_responses(rng, bank, latent, range(1, cfg.n_trials + 1), cfg.sa_gain)
    return traces, EventStream(events), responses, latent


def generate_synthetic(cfg: SynthConfig, out_dir: str | Path) -> Path:
    """Write a dataset tree plus ``truth.csv`` (per-trial latent) and ``synth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    montage = load_montage()
    rng = np.random.default_rng([cfg.seed, 0x5A])
    bank = question_bank(rng)
    truth = []
    for i in range(cfg.n_participants):
        pid = f"P{i + 1:02d}"
        prng = np.random.default_rng([cfg.seed, 0x5A, i])
        traces, events, responses, latent = generate_participant(cfg, prng, bank, montage)
        pdir = out / pid
        for mod, tr in traces.items():
            write_trace(pdir / "signals" / f"{mod.value}.csv", tr)
        write_events(pdir / "events.csv", events)
        write_responses(pdir / "responses.csv", responses)
        truth += [(pid, t + 1, float(v)) for t, v in enumerate(latent)]
    pd.DataFrame(truth, columns=["participant", "trial", "latent"]).to_csv(
        out / "truth.csv", index=False, float_format="%.17g")
    meta = {**asdict(cfg), "coupling": dict(cfg.coupling), "fs": dict(cfg.fs),
            "bank": bank.to_dict(orient="list")}
    (out / "synth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out
