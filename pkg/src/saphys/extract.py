"""Per-trial feature extraction across all sensors, epochs and baseline variants."""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import (DataQualityWarning, Dataset, EpochKind, EpochWindow, FeatureKey,
                      FeatureMatrix, Modality, Participant, Variant, apply_baselines, slice_epochs)
from .eye import RqaMetrics, eye_basic_features, rqa
from .neuro import (eeg_band_features, eeg_connectivity, eeg_preprocess, fnirs_epoch_features,
                    fnirs_pipeline, frp_features, load_montage)
from .peripheral import (RspFeatures, detect_r_peaks, ecg_clean, eda_clean, eda_decompose,
                         eda_features, hrv_features, rsp_clean, rsp_features)

NAN = float("nan")
TRIAL_EPOCHS = (EpochKind.FullTrial, EpochKind.Final20s)
BASELINE_VARIANTS = (Variant.Raw, Variant.Standardized, Variant.MinusPreExp, Variant.DivPreExp)


@dataclass(frozen=True)
class ExtractConfig:
    montage: str | None = None
    rqa_radius: float = 64.0
    rqa_min_line: int = 2
    pnn50_below: bool = False
    eeg_window_s: float = 4.0
    scr_threshold: float = 0.01


# base feature key (sensor, channel, feature) -> value, for one epoch
Values = dict[tuple[str, str, str], float]


class _Sensor:
    """Whole-recording preprocessing once, then cheap per-epoch features."""

    def __init__(self, part: Participant, cfg: ExtractConfig, montage):
        self.cfg = cfg
        self.montage = montage
        tr = part.traces
        self.fix = part.events.fixations()
        self.blinks = part.events.blinks()
        self.ecg = self.rsp = self.eda = self.eeg = self.fnirs = self.eye = None
        if Modality.ECG in tr:
            t = tr[Modality.ECG]
            x = ecg_clean(t.samples[0], t.fs)
            self.ecg = t.t0 + detect_r_peaks(x, t.fs)
        if Modality.RSP in tr:
            t = tr[Modality.RSP]
            self.rsp = (t, rsp_clean(t.samples[0], t.fs))
        if Modality.EDA in tr:
            t = tr[Modality.EDA]
            clean = eda_clean(t.samples[0], t.fs)
            self.eda = eda_decompose(clean.signal, t.fs, t.t0, threshold=cfg.scr_threshold)
        if Modality.EEG in tr:
            t = tr[Modality.EEG]
            self.eeg = (t, eeg_preprocess(t.samples, t.fs))
        if Modality.FNIRS in tr:
            self.fnirs = fnirs_pipeline(tr[Modality.FNIRS], montage)
        if Modality.EYE in tr:
            self.eye = tr[Modality.EYE]

    def epoch(self, ep: EpochWindow) -> Values:
        out: Values = {}
        if self.ecg is not None:
            h = hrv_features(self.ecg, ep, pnn50_below=self.cfg.pnn50_below)
            out.update({("ecg", "all", k): v for k, v in h.as_dict().items()})
        if self.rsp is not None:
            t, x = self.rsp
            idx = t.window(ep.start, ep.end)
            if len(idx) >= 3:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DataQualityWarning)
                    r = rsp_features(x[idx], t.fs, ep.length).as_dict()
            else:
                r = dict.fromkeys(RspFeatures.FIELDS, NAN)
            out.update({("rsp", "all", k): v for k, v in r.items()})
        if self.eda is not None:
            out.update({("eda", "all", k): v for k, v in eda_features(self.eda, ep).as_dict().items()})
        if self.eeg is not None:
            out.update(self._eeg(ep))
        if self.fnirs is not None:
            out.update({("fnirs", ch, f): v for (ch, f), v in fnirs_epoch_features(self.fnirs, ep).items()})
        out.update(self._eye(ep))
        return out

    def _eeg(self, ep) -> Values:
        t, x = self.eeg
        idx = t.window(ep.start, ep.end)
        out: Values = {}
        ch = list(t.channels)
        if len(idx) >= 2:
            seg = x[:, idx]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DataQualityWarning)
                bp = eeg_band_features(seg, t.fs, ch, self.montage, window_s=self.cfg.eeg_window_s)
            out.update({("eeg", s, f): v for (s, f), v in bp.features().items()})
            for c, r in eeg_connectivity(seg, ch, self.montage).items():
                out[("eeg", c, "occ_connectivity")] = r
        onsets = self.fix[:, 0] if len(self.fix) else np.empty(0)
        for c in self.montage.frp:
            if c not in ch:
                continue
            f = frp_features(x[ch.index(c)], t.fs, t.t0, onsets, ep)
            out[("eeg", c, "frp_p100")] = f.p100
            out[("eeg", c, "frp_n170")] = f.n170
            out[("eeg", c, "frp_cov_ratio")] = f.cov_ratio
        return out

    def _eye(self, ep) -> Values:
        if self.eye is None and not len(self.fix) and not len(self.blinks):
            return {}
        pt = pupil = None
        if self.eye is not None:
            pt, pupil = self.eye.times, self.eye.samples[0]
        out = {("eye", "all", k): v for k, v in
               eye_basic_features(self.fix, self.blinks, ep, pt, pupil).items()}
        inside = self.fix[(self.fix[:, 0] >= ep.start) & (self.fix[:, 0] < ep.end)] if len(self.fix) else self.fix
        if len(inside) >= 2 and np.isfinite(inside[:, 2:]).all():
            m = rqa(inside[:, 2:], self.cfg.rqa_radius, self.cfg.rqa_min_line).as_dict()
        else:
            m = dict.fromkeys(RqaMetrics.FIELDS, NAN)
        out.update({("eye", "all", k): v for k, v in m.items()})
        return out


def participant_features(part: Participant, cfg: ExtractConfig = ExtractConfig(),
                         montage=None) -> tuple[list[tuple[str, int]], dict[FeatureKey, np.ndarray]]:
    """Feature columns (all epochs and variants) for one participant's trials."""
    montage = montage if montage is not None else load_montage(cfg.montage)
    starts = [tr.t0 for tr in part.traces.values()]
    epochs = slice_epochs(part.events, min(starts) if starts else None)
    sensor = _Sensor(part, cfg, montage)
    pre_exp = sensor.epoch(next(e for e in epochs if e.kind is EpochKind.PreExperimentBaseline))
    trials = [idx for idx, _, _ in part.events.trials]
    by_kind: dict[EpochKind, list[Values]] = {}
    for kind in (*TRIAL_EPOCHS, EpochKind.PreTrialBaseline):
        per_trial = []
        for t in trials:
            ep = next((e for e in epochs if e.kind is kind and e.trial == t), None)
            per_trial.append(sensor.epoch(ep) if ep is not None else {})
        by_kind[kind] = per_trial
    bases = sorted(set().union(*(v.keys() for vals in by_kind.values() for v in vals)) | set(pre_exp))
    cols: dict[FeatureKey, np.ndarray] = {}
    for kind in (*TRIAL_EPOCHS, EpochKind.PreTrialBaseline):
        for b in bases:
            v = np.array([d.get(b, NAN) for d in by_kind[kind]], dtype=float)
            bt = np.array([d.get(b, NAN) for d in by_kind[EpochKind.PreTrialBaseline]], dtype=float)
            be = pre_exp.get(b, NAN)
            var = apply_baselines(v, bt, be)
            keep = BASELINE_VARIANTS if kind is EpochKind.PreTrialBaseline else tuple(Variant)
            for vr in keep:
                cols[FeatureKey(*b, kind, vr)] = np.where(np.isfinite(v), var[vr], NAN)
    return [(part.pid, t) for t in trials], cols


def _one(args):
    part, cfg = args
    return participant_features(part, cfg)


def extract_features(ds: Dataset, cfg: ExtractConfig = ExtractConfig(), n_jobs: int = 1) -> FeatureMatrix:
    """Feature matrix over every participant and trial.

    Columns missing for every row are dropped with a warning; remaining
    gaps are left for imputation.
    """
    parts = [ds.participants[p] for p in sorted(ds.participants)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_one, [(p, cfg) for p in parts]))
    else:
        results = [_one((p, cfg)) for p in parts]
    keys = sorted(set().union(*(c.keys() for _, c in results)), key=str)
    rows = [r for rs, _ in results for r in rs]
    blocks = []
    for rs, c in results:
        blocks.append(np.column_stack([c.get(k, np.full(len(rs), NAN)) for k in keys]) if keys
                      else np.empty((len(rs), 0)))
    X = np.vstack(blocks) if blocks else np.empty((0, len(keys)))
    dead = ~np.isfinite(X).any(axis=0)
    if dead.any():
        warnings.warn(f"{int(dead.sum())} feature columns missing for every trial were dropped",
                      DataQualityWarning)
    keep = np.flatnonzero(~dead)
    return FeatureMatrix(rows, [keys[i] for i in keep], X[:, keep])
