"""Numeric primitives shared by the feature extractors."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import signal as sps
from scipy import stats
from scipy.integrate import trapezoid

from .dataset import DataQualityWarning


class FilterKind(str, Enum):
    BandPass = "bandpass"
    BandStop = "bandstop"
    LowPass = "lowpass"
    HighPass = "highpass"


@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind
    lo: float | None = None
    hi: float | None = None
    order: int = 4
    zero_phase: bool = True

    def corners(self):
        if self.kind in (FilterKind.BandPass, FilterKind.BandStop):
            return [self.lo, self.hi]
        return self.hi if self.kind is FilterKind.LowPass else self.lo


def butterworth_filter(x, fs: float, spec: FilterSpec, padlen: int | None = None) -> np.ndarray:
    """Butterworth IIR filter along the last axis.

    Zero-phase mode runs the filter forward and backward, which doubles the
    effective order and removes group delay. ``padlen`` sets the odd
    extension used against edge transients (capped at the signal length).
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("butterworth_filter: non-finite input")
    nyq = fs / 2.0
    corners = np.atleast_1d(np.asarray(spec.corners(), dtype=float))
    if np.any(corners <= 0) or np.any(corners >= nyq):
        raise ValueError(f"butterworth_filter: corners {corners.tolist()} Hz invalid for fs={fs} "
                         f"(Nyquist {nyq})")
    if len(corners) == 2 and not corners[0] < corners[1]:
        raise ValueError("butterworth_filter: lo must be < hi")
    if spec.order < 1:
        raise ValueError("butterworth_filter: order must be positive")
    if x.shape[-1] <= 3 * spec.order:
        raise ValueError("butterworth_filter: signal too short for filter order")
    sos = sps.butter(spec.order, corners if len(corners) == 2 else corners[0],
                     btype=spec.kind.value, fs=fs, output="sos")
    if spec.zero_phase:
        pad = 3 * (2 * len(sos) + 1) if padlen is None else padlen
        return sps.sosfiltfilt(sos, x, axis=-1, padlen=min(x.shape[-1] - 1, pad))
    return sps.sosfilt(sos, x, axis=-1)


def bandpass(x, fs, lo, hi, order=4):
    return butterworth_filter(x, fs, FilterSpec(FilterKind.BandPass, lo, hi, order))


def resample(x, fs_in: float, fs_out: float) -> np.ndarray:
    """Resample onto a uniform grid at ``fs_out``.

    Downsampling applies a zero-phase low-pass at 0.45 * fs_out first; the
    new grid is reached by linear interpolation.
    """
    if not (fs_in > 0 and fs_out > 0):
        raise ValueError("resample: sampling rates must be > 0")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if n < 4:
        raise ValueError("resample: need at least 4 input samples")
    if fs_in == fs_out:
        return x.copy()
    if fs_out < fs_in:
        x = butterworth_filter(x, fs_in, FilterSpec(FilterKind.LowPass, hi=0.45 * fs_out))
    t_in = np.arange(n) / fs_in
    n_out = int(np.floor((n - 1) / fs_in * fs_out + 1e-9)) + 1
    t_out = np.arange(n_out) / fs_out
    if x.ndim == 1:
        return np.interp(t_out, t_in, x)
    return np.stack([np.interp(t_out, t_in, row) for row in x.reshape(-1, n)]).reshape(
        x.shape[:-1] + (n_out,))


def welch_psd(x, fs: float, window_s: float = 4.0, overlap: float = 0.5):
    """Hann-windowed Welch PSD (density scaling, one-sided).

    Returns ``(freqs, psd)``; ``psd`` has the shape of ``x`` with the last
    axis replaced by frequency. A signal shorter than one window is analysed
    as a single segment with a warning.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    nper = int(round(window_s * fs))
    if n < nper:
        warnings.warn(f"welch_psd: signal ({n} samples) shorter than window ({nper}), "
                      "single-segment estimate", DataQualityWarning)
        nper = n
    return sps.welch(x, fs=fs, window="hann", nperseg=nper, noverlap=int(nper * overlap),
                     detrend="constant", scaling="density", axis=-1)


def band_power(freqs, psd, lo: float, hi: float, *, inclusive_hi: bool = False):
    """Integrated PSD over [lo, hi) (rectangle rule on the Welch grid)."""
    freqs = np.asarray(freqs)
    sel = (freqs >= lo) & ((freqs <= hi) if inclusive_hi else (freqs < hi))
    df = freqs[1] - freqs[0] if len(freqs) > 1 else 1.0
    return np.sum(np.asarray(psd)[..., sel], axis=-1) * df


def find_peaks(x, fs: float, min_prominence: float = 0.0, min_distance_s: float = 0.0):
    """Local maxima filtered by prominence and minimum separation.

    Among peaks closer than ``min_distance_s`` the higher one survives; equal
    heights keep the earlier peak. Returns ``(times, amplitudes)`` with times
    in seconds from the first sample.
    """
    if min_distance_s < 0:
        raise ValueError("find_peaks: min_distance_s must be >= 0")
    x = np.asarray(x, dtype=float)
    if len(x) < 3:
        return np.empty(0), np.empty(0)
    idx, _ = sps.find_peaks(x)  # plateaus resolve to their midpoint
    if len(idx) and min_prominence > 0:
        prom = sps.peak_prominences(x, idx)[0]
        idx = idx[prom >= min_prominence]
    dist = min_distance_s * fs
    if len(idx) > 1 and dist > 0:
        order = sorted(range(len(idx)), key=lambda i: (-x[idx[i]], idx[i]))
        keep = np.zeros(len(idx), bool)
        kept = []
        for i in order:
            if all(abs(idx[i] - idx[k]) >= dist for k in kept):
                keep[i] = True
                kept.append(i)
        idx = idx[keep]
    return idx / fs, x[idx]


def savitzky_golay(x, window: int, order: int = 3) -> np.ndarray:
    """Least-squares local polynomial smoothing; NaN samples are filled.

    Each missing sample is replaced by the value of a polynomial fitted to
    the valid samples of the window centred on it (the window widens for
    long gaps); the completed series is then smoothed.
    """
    x = np.asarray(x, dtype=float)
    if window % 2 == 0 or window <= order:
        raise ValueError("savitzky_golay: window must be odd and > order")
    if window >= len(x):
        raise ValueError("savitzky_golay: window must be shorter than the signal")
    bad = ~np.isfinite(x)
    if bad.all():
        raise ValueError("savitzky_golay: no valid samples")
    y = x.copy()
    if bad.any():
        n = len(x)
        good_idx = np.flatnonzero(~bad)
        half = window // 2
        for i in np.flatnonzero(bad):
            h = half
            while True:
                lo, hi = np.searchsorted(good_idx, [i - h, i + h + 1])
                pts = good_idx[lo:hi]
                if len(pts) > order or h > n:
                    break
                h *= 2
            if len(pts) > order:
                coef = np.polyfit(pts - i, x[pts], order)
                y[i] = coef[-1]
            else:
                y[i] = np.interp(i, good_idx, x[good_idx])
    return sps.savgol_filter(y, window, order, mode="interp")


@dataclass(frozen=True)
class EpochStats:
    mean: float
    variance: float
    skew: float
    kurtosis: float
    slope: float
    rms: float
    auc: float
    max_amplitude: float
    time_to_max: float

    FIELDS = ("mean", "variance", "skew", "kurtosis", "slope", "rms", "auc",
              "max_amplitude", "time_to_max")

    def as_dict(self):
        return {f: getattr(self, f) for f in self.FIELDS}


def epoch_stats(x, fs: float) -> EpochStats:
    """Descriptive statistics of one epoch.

    Variance, skew and excess kurtosis use the bias-corrected sample
    formulas (skew and kurtosis are 0 when the epoch is constant). ``slope``
    is the OLS slope against time in seconds, ``auc`` the trapezoidal
    integral, ``time_to_max`` the time of the first maximum from epoch start.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError("epoch_stats: need at least 2 samples")
    t = np.arange(n) / fs
    var = float(np.var(x, ddof=1))
    if var <= 1e-300 or np.ptp(x) == 0:
        skew = kurt = 0.0
    else:
        skew = float(stats.skew(x, bias=n < 3))
        kurt = float(stats.kurtosis(x, fisher=True, bias=n < 4))
    tc = t - t.mean()
    slope = float(np.dot(tc, x - x.mean()) / np.dot(tc, tc))
    imax = int(np.argmax(x))
    return EpochStats(
        mean=float(x.mean()), variance=var, skew=skew, kurtosis=kurt, slope=slope,
        rms=float(np.sqrt(np.mean(x * x))), auc=float(trapezoid(x, dx=1.0 / fs)),
        max_amplitude=float(x[imax]), time_to_max=float(t[imax]),
    )


def pearson_corr(x, y) -> float:
    """Sample Pearson correlation; NaN (missing) when either input is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or len(x) < 2:
        raise ValueError("pearson_corr: need equal lengths >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.dot(xc, xc))
    sy = np.sqrt(np.dot(yc, yc))
    if sx <= 1e-12 * max(1.0, np.abs(x).max()) or sy <= 1e-12 * max(1.0, np.abs(y).max()):
        return float("nan")
    return float(np.clip(np.dot(xc, yc) / (sx * sy), -1.0, 1.0))
