"""ECG, respiration and electrodermal features."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, linalg, optimize
from scipy import signal as sps
from scipy.integrate import trapezoid
from scipy.ndimage import gaussian_filter1d

from . import dsp
from .dataset import DataQualityWarning, EpochWindow
from .dsp import FilterKind, FilterSpec

NAN = float("nan")


def _window(times_or_fs, epoch: EpochWindow | None):
    if epoch is None:
        return -np.inf, np.inf
    return epoch.start, epoch.end


# ---------------------------------------------------------------------------
# ECG


def ecg_clean(x, fs: float, band=(1.0, 100.0), notch=60.0, order: int = 4) -> np.ndarray:
    """Band-pass (default 1-100 Hz) plus a band-stop around the mains frequency.

    The upper corner is lowered to 0.45 * fs when the sampling rate cannot
    support it; the notch is skipped when it lies above Nyquist.
    """
    hi = min(band[1], 0.45 * fs)
    y = dsp.butterworth_filter(x, fs, FilterSpec(FilterKind.BandPass, band[0], hi, order))
    if notch is not None and notch + 2.0 < fs / 2:
        y = dsp.butterworth_filter(y, fs, FilterSpec(FilterKind.BandStop, notch - 2.0, notch + 2.0, order))
    return y


def detect_r_peaks(x, fs: float, refractory_s: float = 0.25, integration_s: float = 0.15,
                   search_s: float = 0.075) -> np.ndarray:
    """R-peak times (s from the first sample) of a filtered ECG.

    Energy detector: derivative, squaring and a centred moving integral,
    then an adaptive threshold that tracks running signal and noise peak
    levels. Candidates inside the refractory period are discarded; each
    beat is placed at the maximum of ``x`` within ``search_s`` of the
    detection.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < 3 or np.ptp(x) == 0:
        return np.empty(0)
    deriv = np.gradient(x) * fs
    width = max(1, int(round(integration_s * fs)))
    energy = np.convolve(deriv * deriv, np.ones(width) / width, mode="same")
    if not energy.max() > 0:
        return np.empty(0)
    cand, _ = sps.find_peaks(energy, distance=max(1, int(refractory_s * fs)))
    if len(cand) == 0:
        return np.empty(0)
    head = energy[: int(2 * fs)] if len(energy) > 2 * fs else energy
    spk = head.max() / 3.0
    npk = head.mean() / 2.0
    beats = []
    half = max(1, int(round(search_s * fs)))
    for c in cand:
        thr = npk + 0.25 * (spk - npk)
        v = energy[c]
        if v > thr:
            lo, hi = max(0, c - half), min(len(x), c + half + 1)
            b = lo + int(np.argmax(x[lo:hi]))
            if beats and (b - beats[-1]) < refractory_s * fs:
                if x[b] > x[beats[-1]]:
                    beats[-1] = b
                continue
            beats.append(b)
            spk = 0.125 * v + 0.875 * spk
        else:
            npk = 0.125 * v + 0.875 * npk
    return np.asarray(beats) / fs


@dataclass(frozen=True)
class HrvFeatures:
    heart_rate: float
    sdsd: float
    pnn50: float
    rmssd: float

    FIELDS = ("heart_rate", "rmssd", "sdsd", "pnn50")

    def as_dict(self):
        return {f: getattr(self, f) for f in self.FIELDS}


def hrv_features(beat_times, epoch: EpochWindow | None = None, *,
                 pnn50_below: bool = False) -> HrvFeatures:
    """Heart rate (bpm) and successive-difference variability (ms, %).

    ``pnn50`` is the percentage of successive NN differences exceeding 50 ms;
    ``pnn50_below=True`` reports the complementary percentage instead.
    Fewer than 2 beats leave everything missing; fewer than 3 leave the
    variability metrics missing.
    """
    t = np.sort(np.asarray(beat_times, dtype=float))
    lo, hi = _window(None, epoch)
    t = t[(t >= lo) & (t <= hi)]
    if len(t) < 2:
        return HrvFeatures(NAN, NAN, NAN, NAN)
    nn = np.diff(t)
    hr = 60.0 / nn.mean()
    if len(nn) < 2:
        return HrvFeatures(hr, NAN, NAN, NAN)
    sd = np.diff(nn)
    rmssd = float(np.sqrt(np.mean(sd * sd))) * 1000.0
    sdsd = float(np.std(sd, ddof=1)) * 1000.0 if len(sd) > 1 else NAN
    frac = np.mean(np.abs(sd) > 0.050)
    pnn50 = 100.0 * ((1.0 - frac) if pnn50_below else frac)
    return HrvFeatures(float(hr), sdsd, float(pnn50), rmssd)


# ---------------------------------------------------------------------------
# respiration


def rsp_clean(x, fs: float, band=(0.05, 3.0), order: int = 2) -> np.ndarray:
    hi = min(band[1], 0.45 * fs)
    return dsp.butterworth_filter(x, fs, FilterSpec(FilterKind.BandPass, band[0], hi, order))


@dataclass(frozen=True)
class RspFeatures:
    rate: float
    median_amplitude: float
    tidal_proxy: float
    minute_vent_proxy: float

    FIELDS = ("rate", "median_amplitude", "tidal_proxy", "minute_vent_proxy")

    def as_dict(self):
        return {f: getattr(self, f) for f in self.FIELDS}


def rsp_features(x, fs: float, epoch_length: float | None = None, *,
                 prominence_frac: float = 0.1, min_distance_s: float = 1.0) -> RspFeatures:
    """Breath-level features of one (already filtered) respiration epoch.

    Breaths are peaks with prominence of at least ``prominence_frac`` times
    the epoch SD. The rate spans first to last peak; the tidal proxy is the
    mean peak-to-preceding-trough excursion; minute ventilation proxy is
    rate times tidal proxy.
    """
    x = np.asarray(x, dtype=float)
    length = epoch_length if epoch_length is not None else len(x) / fs
    sd = float(np.std(x))
    pt, pa = dsp.find_peaks(x, fs, prominence_frac * sd, min_distance_s) if sd > 0 else ([], [])
    pt, pa = np.asarray(pt), np.asarray(pa)
    if len(pt) == 0:
        warnings.warn("rsp_features: no breaths detected", DataQualityWarning)
        return RspFeatures(0.0, 0.0, 0.0, 0.0)
    if len(pt) >= 2:
        rate = 60.0 * (len(pt) - 1) / (pt[-1] - pt[0])
    else:
        rate = 60.0 * len(pt) / length
    tt, ta = dsp.find_peaks(-x, fs, prominence_frac * sd, min_distance_s)
    ta = -np.asarray(ta)
    excursions = []
    prev = -np.inf
    for t, a in zip(pt, pa):
        sel = (tt > prev) & (tt < t)
        if sel.any():
            excursions.append(a - ta[np.flatnonzero(sel)[-1]])
        prev = t
    tidal = float(np.mean(excursions)) if excursions else 0.0
    return RspFeatures(float(rate), float(np.median(pa)), tidal, float(rate) * tidal)


# ---------------------------------------------------------------------------
# EDA


@dataclass
class CleanEda:
    signal: np.ndarray
    rejected: np.ndarray
    low_quality: bool


def eda_clean(x, fs: float, *, valid_range=(-1.0, 40.0), max_slope: float = 0.5,
              max_curvature: float = 0.5, window_s: float = 1.0) -> CleanEda:
    """Reject implausible skin-conductance samples, then fill and smooth.

    Samples outside ``valid_range`` (uS), or where the local first derivative
    exceeds ``max_slope`` uS/s or the second derivative ``max_curvature``
    uS/s^2, are dropped; gaps are filled and the trace smoothed with a cubic
    Savitzky-Golay filter. Derivatives come from the same local cubic fit.
    """
    x = np.asarray(x, dtype=float)
    if fs < 4:
        raise ValueError("eda_clean: sampling rate must be >= 4 Hz")
    w = max(5, int(round(window_s * fs)) | 1)
    bad = ~np.isfinite(x) | (x < valid_range[0]) | (x > valid_range[1])
    base = x.copy()
    base[bad] = np.nan
    filled = dsp.savitzky_golay(base, w, 3) if bad.any() else x
    d1 = sps.savgol_filter(filled, w, 3, deriv=1, delta=1.0 / fs, mode="interp")
    d2 = sps.savgol_filter(filled, w, 3, deriv=2, delta=1.0 / fs, mode="interp")
    bad |= (np.abs(d1) > max_slope) | (np.abs(d2) > max_curvature)
    low = bad.mean() > 0.5
    if low:
        warnings.warn(f"eda_clean: {100 * bad.mean():.0f}% of samples rejected, low quality",
                      DataQualityWarning)
    if bad.all():
        return CleanEda(np.full_like(x, np.nanmedian(np.where(np.isfinite(x), x, np.nan))), bad, True)
    base = x.copy()
    base[bad] = np.nan
    return CleanEda(dsp.savitzky_golay(base, w, 3), bad, low)


def bateman(fs: float, tau=(1.0, 3.75), duration_s: float | None = None) -> np.ndarray:
    """Sampled Bateman impulse response e^{-t/slow} - e^{-t/fast}, unit area."""
    fast, slow = min(tau), max(tau)
    duration_s = duration_s or 10.0 * slow
    t = np.arange(int(round(duration_s * fs))) / fs
    k = np.exp(-t / slow) - np.exp(-t / fast)
    return k / (k.sum() / fs)


@dataclass
class Scr:
    onset: float
    peak: float
    amplitude: float
    response: np.ndarray = field(repr=False)
    offset: int = field(repr=False, default=0)


@dataclass
class EdaDecomposition:
    fs: float
    t0: float
    tonic: np.ndarray
    phasic: np.ndarray
    driver: np.ndarray
    scrs: list[Scr]
    fallback: bool = False

    @property
    def times(self):
        return self.t0 + np.arange(len(self.tonic)) / self.fs


def _nnls_deconvolve(target, kernel, fs, chunk_s=60.0, lookahead_s=20.0):
    n = len(target)
    L = max(1, int(round(chunk_s * fs)))
    A = int(round(lookahead_s * fs))
    driver = np.zeros(n)
    carry = np.zeros(n + len(kernel))
    col = np.zeros(min(n, L + A))
    kk = kernel[: len(col)] / fs
    col[: len(kk)] = kk
    K_full = linalg.toeplitz(col, np.zeros(len(col)))
    c = 0
    while c < n:
        m = min(n - c, L + A)
        K = K_full[:m, :m]
        b = target[c:c + m] - carry[c:c + m]
        sol, _ = optimize.nnls(K, b, maxiter=50 * m)
        keep = min(L, m)
        driver[c:c + keep] = sol[:keep]
        resp = np.convolve(sol[:keep], kernel / fs)
        carry[c:c + len(resp)] += resp[: len(carry) - c]
        c += keep
    return driver


def _trough_to_peak(s, fs, threshold):
    pt, pa = dsp.find_peaks(s, fs, threshold, 1.0)
    tt, ta = dsp.find_peaks(-s, fs, 0.0, 0.0)
    scrs = []
    for t, a in zip(pt, pa):
        before = tt[tt < t]
        if len(before) == 0:
            continue
        trough = -ta[np.flatnonzero(tt < t)[-1]]
        amp = a - trough
        if amp >= threshold:
            scrs.append(Scr(float(before[-1]), float(t), float(amp), np.empty(0)))
    return scrs


def eda_decompose(x, fs: float, t0: float = 0.0, *, tau=(1.0, 3.75), threshold: float = 0.01,
                  work_fs: float = 4.0, tonic_window_s: float = 10.0) -> EdaDecomposition:
    """Split cleaned skin conductance into tonic level and phasic responses.

    The trace is modelled as a non-negative driver convolved with a
    unit-area Bateman response, on top of a slow tonic level. The tonic
    level is interpolated through per-window minima of the (smoothed)
    unconstrained driver, the phasic driver is recovered by non-negative
    deconvolution of the remainder, and each driver impulse whose
    reconvolved response reaches ``threshold`` uS becomes an SCR. If the
    deconvolution fails, SCRs come from trough-to-peak analysis and
    ``fallback`` is set.
    """
    x = np.asarray(x, dtype=float)
    if fs > work_fs:
        s = dsp.resample(x, fs, work_fs)
        fs_w = work_fs
    else:
        s = x.copy()
        fs_w = fs
    n = len(s)
    if n / fs_w < 30:
        warnings.warn("eda_decompose: less than 30 s of data, tonic estimate unstable",
                      DataQualityWarning)
    kernel = bateman(fs_w, tau)
    # unconstrained driver: exact inverse of the sampled Bateman filter
    fast, slow = min(tau), max(tau)
    a, b = np.exp(-1.0 / (fs_w * slow)), np.exp(-1.0 / (fs_w * fast))
    norm = (np.exp(-np.arange(len(kernel)) / (fs_w * slow))
            - np.exp(-np.arange(len(kernel)) / (fs_w * fast))).sum() / fs_w
    lead = len(kernel)
    padded = np.concatenate([np.full(lead, s[0]), s, [s[-1]]])
    drv = (padded[2:] - (a + b) * padded[1:-1] + a * b * padded[:-2]) / (a - b) * norm * fs_w
    drv = drv[lead - 1:lead - 1 + n]
    smooth = gaussian_filter1d(drv, sigma=max(1.0, fs_w), mode="nearest")
    w = max(2, int(round(tonic_window_s * fs_w)))
    knots_t, knots_v = [], []
    for i in range(0, n, w):
        seg = smooth[i:i + w]
        j = int(np.argmin(seg))
        knots_t.append(i + j)
        knots_v.append(seg[j])
    if knots_t[0] != 0:
        knots_t.insert(0, 0)
        knots_v.insert(0, knots_v[0])
    if knots_t[-1] != n - 1:
        knots_t.append(n - 1)
        knots_v.append(knots_v[-1])
    knots_t, uniq = np.unique(knots_t, return_index=True)
    knots_v = np.asarray(knots_v)[uniq]
    if len(knots_t) >= 2:
        tonic_drv = interpolate.PchipInterpolator(knots_t, knots_v)(np.arange(n))
    else:
        tonic_drv = np.full(n, knots_v[0])
    tonic = np.convolve(np.concatenate([np.full(lead, tonic_drv[0]), tonic_drv]),
                        kernel / fs_w)[lead:lead + n]
    tonic = np.minimum(tonic, s)
    phasic = s - tonic
    fallback = False
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", RuntimeWarning)
            driver = _nnls_deconvolve(phasic, kernel, fs_w)
    except (RuntimeError, RuntimeWarning, ValueError):
        fallback = True
    if fallback:
        warnings.warn("eda_decompose: deconvolution failed, trough-to-peak fallback",
                      DataQualityWarning)
        scrs = _trough_to_peak(s, fs_w, threshold)
        for r in scrs:
            r.onset += t0
            r.peak += t0
        return EdaDecomposition(fs_w, t0, tonic, phasic, np.zeros(n), scrs, True)
    scrs = []
    if driver.max() > 0:
        # impulses are separated by zero runs or by troughs of the smoothed driver
        sm = gaussian_filter1d(driver, sigma=max(1.0, 0.5 * fs_w), mode="constant")
        troughs = sps.argrelmin(sm)[0]
        zeros = np.flatnonzero(driver <= 0)
        bounds = np.unique(np.concatenate([[0, n], troughs, zeros]))
        kdt = kernel / fs_w
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            seg = driver[lo:hi]
            if not seg.any():
                continue
            resp = np.convolve(seg, kdt)
            amp = float(resp.max())
            if amp >= threshold:
                nz = np.flatnonzero(seg >= 0.01 * seg.max())  # ignore residual driver floor
                scrs.append(Scr(t0 + (lo + nz[0]) / fs_w, t0 + (lo + int(np.argmax(resp))) / fs_w,
                                amp, resp, lo))
    return EdaDecomposition(fs_w, t0, tonic, phasic, driver, scrs, False)


@dataclass(frozen=True)
class EdaFeatures:
    tonic_min: float
    tonic_max: float
    tonic_mean: float
    phasic_min: float
    phasic_max: float
    phasic_mean: float
    scr_mean_amplitude: float
    scr_sum_amplitude: float
    scr_count: float
    scr_auc: float

    FIELDS = ("tonic_min", "tonic_max", "tonic_mean", "phasic_min", "phasic_max", "phasic_mean",
              "scr_mean_amplitude", "scr_sum_amplitude", "scr_count", "scr_auc")

    def as_dict(self):
        return {f: getattr(self, f) for f in self.FIELDS}


def eda_features(dec: EdaDecomposition, epoch: EpochWindow | None = None) -> EdaFeatures:
    """Epoch summary of a decomposition; SCRs are counted by onset time."""
    t = dec.times
    lo, hi = _window(None, epoch)
    sel = (t >= lo) & (t < hi)
    if sel.sum() < 1:
        return EdaFeatures(*([NAN] * 10))
    tonic, phasic = dec.tonic[sel], dec.phasic[sel]
    scrs = [r for r in dec.scrs if lo <= r.onset < hi]
    amps = np.array([r.amplitude for r in scrs])
    total = np.zeros(len(dec.tonic))
    for r in scrs:
        if len(r.response):
            end = min(len(total), r.offset + len(r.response))
            total[r.offset:end] += r.response[: end - r.offset]
    seg = total[sel]
    auc = float(trapezoid(seg, dx=1.0 / dec.fs)) if len(seg) > 1 else 0.0
    return EdaFeatures(
        float(tonic.min()), float(tonic.max()), float(tonic.mean()),
        float(phasic.min()), float(phasic.max()), float(phasic.mean()),
        float(amps.mean()) if len(amps) else 0.0, float(amps.sum()), float(len(amps)), auc,
    )
