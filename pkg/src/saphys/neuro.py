"""EEG spectral, connectivity and fixation-locked features; fNIRS haemodynamics."""
from __future__ import annotations

import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import dsp
from .dataset import DataQualityWarning, EpochWindow, SignalTrace
from .dsp import FilterKind, FilterSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

NAN = float("nan")
REGIONS = ("frontal", "medial", "parietal", "occipital")
BANDS = {
    "delta": (1.0, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 50.0),
}


def _load_toml(path: str | Path | None, default: str) -> dict:
    if path is None:
        with resources.files("saphys.data").joinpath(default).open("rb") as fh:
            return tomllib.load(fh)
    with open(path, "rb") as fh:
        return tomllib.load(fh)


# ---------------------------------------------------------------------------
# montage


@dataclass(frozen=True)
class FnirsGeometry:
    source: int
    detector: int
    distance_mm: float


@dataclass(frozen=True)
class EegMontage:
    regions: dict[str, str]
    frp: tuple[str, ...] = ("O1", "O2", "POz")
    occipital_reference: tuple[str, ...] = ("O1", "Oz", "O2")
    fnirs: dict[str, FnirsGeometry] = field(default_factory=dict)
    wavelengths: tuple[float, float] = (760.0, 850.0)
    dpf: float = 6.0

    def __post_init__(self):
        bad = {e: r for e, r in self.regions.items() if r not in REGIONS}
        if bad:
            raise ValueError(f"montage: unknown regions {bad}")
        for e in (*self.frp, *self.occipital_reference):
            if e not in self.regions:
                raise ValueError(f"montage: electrode {e} not in montage")

    @property
    def electrodes(self) -> list[str]:
        return list(self.regions)

    def in_region(self, region: str) -> list[str]:
        return [e for e, r in self.regions.items() if r == region]


def load_montage(path: str | Path | None = None) -> EegMontage:
    """Read a montage description (TOML); the packaged default when ``path`` is None."""
    cfg = _load_toml(path, "montage.toml")
    eeg = cfg["eeg"]
    roles = eeg.get("roles", {})
    fn = cfg.get("fnirs", {})
    chans = {k: FnirsGeometry(int(v[0]), int(v[1]), float(v[2]))
             for k, v in fn.get("channels", {}).items()}
    return EegMontage(
        regions=dict(eeg["regions"]),
        frp=tuple(roles.get("frp", ("O1", "O2", "POz"))),
        occipital_reference=tuple(roles.get("occipital_reference", ("O1", "Oz", "O2"))),
        fnirs=chans,
        wavelengths=tuple(float(w) for w in fn.get("wavelengths_nm", (760, 850))),
        dpf=float(fn.get("dpf", 6.0)),
    )


# ---------------------------------------------------------------------------
# EEG


def eeg_preprocess(x, fs: float, band=(0.5, 50.0), order: int = 4,
                   artifact_hook: Callable[[np.ndarray, float], np.ndarray] | None = None) -> np.ndarray:
    """Zero-phase band-pass per channel, then an optional artifact-rejection hook."""
    if fs < 128:
        raise ValueError("eeg_preprocess: sampling rate must be >= 128 Hz")
    y = dsp.butterworth_filter(x, fs, FilterSpec(FilterKind.BandPass, band[0], min(band[1], 0.45 * fs), order))
    return artifact_hook(y, fs) if artifact_hook is not None else y


@dataclass
class BandPowerSet:
    absolute: dict[str, dict[str, float]]
    relative: dict[str, dict[str, float]]
    engagement_index: float
    task_load_index: float

    def features(self) -> dict[tuple[str, str], float]:
        out = {}
        for scope, bands in self.relative.items():
            for b, v in bands.items():
                out[(scope, f"rel_{b}")] = v
                out[(scope, f"abs_{b}")] = self.absolute[scope][b]
        out[("all", "engagement_index")] = self.engagement_index
        out[("all", "task_load_index")] = self.task_load_index
        return out


def _ratio(a, b):
    return a / b if b > 0 else NAN


def eeg_band_features(x, fs: float, channels, montage: EegMontage, *,
                      window_s: float = 4.0) -> BandPowerSet:
    """Absolute and relative band powers over all channels and per region.

    Channel band powers are averaged within each scope; relative power is
    band power over the summed 1-50 Hz power. Engagement is
    beta / (alpha + theta) on the whole head; task load is frontal theta over
    parietal alpha.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    channels = list(channels)
    freqs, psd = dsp.welch_psd(x, fs, window_s)
    power = {b: dsp.band_power(freqs, psd, lo, hi, inclusive_hi=(b == "gamma"))
             for b, (lo, hi) in BANDS.items()}
    scopes = {"all": channels}
    for r in REGIONS:
        scopes[r] = [c for c in channels if montage.regions.get(c) == r]
    absolute, relative = {}, {}
    for scope, members in scopes.items():
        idx = [channels.index(c) for c in members]
        if not idx:
            continue
        ab = {b: float(np.mean(p[idx])) for b, p in power.items()}
        total = sum(ab.values())
        absolute[scope] = ab
        relative[scope] = {b: _ratio(v, total) for b, v in ab.items()}
    a = absolute["all"]
    eng = _ratio(a["beta"], a["alpha"] + a["theta"])
    tl = NAN
    if "frontal" in absolute and "parietal" in absolute:
        tl = _ratio(absolute["frontal"]["theta"], absolute["parietal"]["alpha"])
    return BandPowerSet(absolute, relative, eng, tl)


def eeg_connectivity(x, channels, montage: EegMontage) -> dict[str, float]:
    """Correlation of each frontal channel with the mean occipital reference."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    channels = list(channels)
    ref_idx = [channels.index(c) for c in montage.occipital_reference if c in channels]
    if not ref_idx:
        raise ValueError("eeg_connectivity: no occipital reference channels present")
    ref = x[ref_idx].mean(axis=0)
    return {c: dsp.pearson_corr(x[channels.index(c)], ref)
            for c in montage.in_region("frontal") if c in channels}


@dataclass(frozen=True)
class FrpFeatures:
    p100: float
    p100_latency: float
    n170: float
    cov_ratio: float
    n_fixations: int


def _cov(seg):
    m = abs(float(np.mean(seg)))
    sd = float(np.std(seg, ddof=1))
    return sd / m if m > 0 else np.inf, sd


def frp_features(x, fs: float, t0: float, onsets, epoch: EpochWindow | None = None, *,
                 pre_s: float = 0.2, post_s: float = 0.3, peak_s: float = 0.2,
                 min_fixations: int = 5) -> FrpFeatures:
    """Fixation-locked average of one channel and its early components.

    Segments spanning ``pre_s`` before to ``post_s`` after each onset are
    baseline-corrected by their pre-onset mean and averaged; segments that
    cross the epoch or recording bounds are skipped. ``p100`` is the maximum
    of the average over [0, peak_s], ``n170`` its mean from the p100 peak to
    ``post_s``; ``cov_ratio`` divides the coefficient of variation over
    [0, peak_s] by that over the pre-onset window, both taken on the
    average of the segments before baseline removal.
    """
    x = np.asarray(x, dtype=float)
    nb = int(round(pre_s * fs))
    na = int(round(post_s * fs))
    npk = int(round(peak_s * fs))
    lo, hi = (epoch.start, epoch.end) if epoch is not None else (-np.inf, np.inf)
    segs, raw = [], []
    for on in np.sort(np.asarray(onsets, dtype=float)):
        if on - pre_s < lo or on + post_s > hi:
            continue
        i = int(round((on - t0) * fs))
        if i - nb < 0 or i + na + 1 > len(x):
            continue
        seg = x[i - nb:i + na + 1]
        raw.append(seg)
        segs.append(seg - seg[:nb].mean())
    if len(segs) < min_fixations:
        return FrpFeatures(NAN, NAN, NAN, NAN, len(segs))
    erp = np.mean(segs, axis=0)
    early = erp[nb:nb + npk + 1]
    k = int(np.argmax(early))
    p100 = float(early[k])
    n170 = float(erp[nb + k:].mean())
    # the baselined ERP has zero pre-onset mean, so CoV uses the unbaselined average
    avg = np.mean(raw, axis=0)
    cov_post, _ = _cov(avg[nb:nb + npk + 1])
    cov_base, sd_base = _cov(avg[:nb])
    if sd_base < 1e-12 or not np.isfinite(cov_base) or cov_base < 1e-12 or not np.isfinite(cov_post):
        ratio = NAN
    else:
        ratio = cov_post / cov_base
    return FrpFeatures(p100, k / fs, n170, float(ratio), len(segs))


# ---------------------------------------------------------------------------
# fNIRS


def load_extinction(path: str | Path | None = None) -> dict[float, tuple[float, float]]:
    """Wavelength (nm) -> (HbO, HbR) molar extinction in 1/(cm M), decadic."""
    cfg = _load_toml(path, "extinction.toml")
    return {float(w): (float(v["hbo"]), float(v["hbr"])) for w, v in cfg["wavelength"].items()}


def extinction_matrix(wavelengths, table=None) -> np.ndarray:
    table = table if table is not None else load_extinction()
    try:
        E = np.array([table[float(w)] for w in wavelengths], dtype=float)
    except KeyError as exc:
        raise ValueError(f"extinction table lacks wavelength {exc}") from None
    if E.shape != (2, 2) or np.linalg.cond(E) > 1e12:
        raise ValueError("extinction matrix singular or not 2x2")
    return E


def beer_lambert_forward(hbo, hbr, E, distance_mm: float, dpf: float) -> np.ndarray:
    """Optical density changes (2 x t) produced by concentration changes in uM."""
    L = distance_mm / 10.0 * dpf
    c = np.vstack([hbo, hbr]) * 1e-6
    return E @ c * L


def beer_lambert_inverse(dod, E, distance_mm: float, dpf: float) -> tuple[np.ndarray, np.ndarray]:
    """Concentration changes (uM) from two-wavelength optical density changes."""
    L = distance_mm / 10.0 * dpf
    c = np.linalg.solve(E, np.asarray(dod, dtype=float) / L) * 1e6
    return c[0], c[1]


@dataclass
class FnirsChannels:
    fs: float
    t0: float
    channels: list[str]
    hbo: np.ndarray
    hbr: np.ndarray

    @property
    def times(self):
        return self.t0 + np.arange(self.hbo.shape[1]) / self.fs

    def window(self, start, end):
        t = self.times
        return np.flatnonzero((t >= start) & (t < end))


def fnirs_channel_label(channel: str, wavelength: float) -> str:
    return f"{channel}_{int(round(wavelength))}"


def fnirs_pipeline(trace: SignalTrace, montage: EegMontage, table=None, *, fs_out: float = 5.0,
                   band=(0.01, 0.5), order: int = 4) -> FnirsChannels:
    """Raw intensities to band-passed HbO/HbR concentration changes (uM).

    Intensity columns are named ``<SxDy>_<wavelength>``. Non-positive samples
    are treated as missing and interpolated; intensities are resampled to
    ``fs_out``, converted to optical density against the mean intensity and
    inverted through the modified Beer-Lambert law.
    """
    E = extinction_matrix(montage.wavelengths, table)
    names, hbo, hbr = [], [], []
    for ch, geo in montage.fnirs.items():
        labels = [fnirs_channel_label(ch, w) for w in montage.wavelengths]
        if not all(lab in trace.channels for lab in labels):
            continue
        dod = []
        for lab in labels:
            raw = np.array(trace.channel(lab), dtype=float)
            bad = ~(raw > 0)
            if bad.all():
                raise ValueError(f"fnirs_pipeline: channel {lab} has no positive samples")
            if bad.any():
                warnings.warn(f"fnirs_pipeline: {bad.sum()} non-positive samples in {lab}",
                              DataQualityWarning)
                idx = np.arange(len(raw))
                raw[bad] = np.interp(idx[bad], idx[~bad], raw[~bad])
            r = dsp.resample(raw, trace.fs, fs_out)
            dod.append(-np.log10(r / r.mean()))
        o, d = beer_lambert_inverse(np.vstack(dod), E, geo.distance_mm, montage.dpf)
        spec = FilterSpec(FilterKind.BandPass, band[0], min(band[1], 0.45 * fs_out), order)
        pad = int(3 * fs_out / band[0])  # the slow high-pass corner needs a long settling pad
        names.append(ch)
        hbo.append(dsp.butterworth_filter(o, fs_out, spec, pad))
        hbr.append(dsp.butterworth_filter(d, fs_out, spec, pad))
    if not names:
        raise ValueError("fnirs_pipeline: no montage channels found in trace")
    return FnirsChannels(fs_out, trace.t0, names, np.vstack(hbo), np.vstack(hbr))


def fnirs_epoch_features(fc: FnirsChannels, epoch: EpochWindow) -> dict[tuple[str, str], float]:
    idx = fc.window(epoch.start, epoch.end)
    out = {}
    for i, ch in enumerate(fc.channels):
        for name, arr in (("hbo", fc.hbo), ("hbr", fc.hbr)):
            if len(idx) < 2:
                stats = dict.fromkeys(dsp.EpochStats.FIELDS, NAN)
            else:
                stats = dsp.epoch_stats(arr[i, idx], fc.fs).as_dict()
            for k, v in stats.items():
                out[(ch, f"{name}_{k}")] = v
    return out
