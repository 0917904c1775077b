"""Heart-rate-variability features from IBI series and pulse windows."""
from __future__ import annotations

import math

import numpy as np
from scipy import interpolate, signal

from .complexity import FeatureBlock, app_and_sample_entropy, zero_crossings
from .errors import InsufficientBeats, TooShort
from .pulse import IbiSeries, PeakList, breathing_rate, spectral_heart_rate
from .registry import (
    CURRENT_VERSION,
    HRV_FREQ_NAMES,
    HRV_NONLINEAR_NAMES,
    HRV_TIME_NAMES,
    POINCARE_NAMES,
    PULSE_NAMES,
    Registry,
    load_registry,
)
from .rppg import PulseSignal

TACHOGRAM_FS = 4.0
TACHOGRAM_MAX_SEGMENT_S = 120.0
TACHOGRAM_GRID_HZ = 0.001
MIN_FREQ_SPAN_S = 10.0
VLF_BAND = (0.0033, 0.04)
LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.4)
# band powers below this (ms^2) count as absent
POWER_FLOOR = 1e-10
SNR_CLIP_DB = 100.0


def _fallback(names) -> FeatureBlock:
    return FeatureBlock(tuple(names), np.zeros(len(names)), False)


def time_domain_hrv(ibi: IbiSeries) -> FeatureBlock:
    nn = ibi.nn
    if len(nn) < 3:
        return _fallback(HRV_TIME_NAMES)
    hr = 60000.0 / nn
    d = np.diff(nn)
    ad = np.abs(d)
    q25, q75 = np.percentile(nn, [25, 75])
    med = np.median(nn)
    sdnn = np.std(nn, ddof=1)
    values = [
        hr.mean(), hr.min(), hr.max(), hr.std(),
        nn.mean(), med, nn.min(), nn.max(), nn.max() - nn.min(),
        sdnn,
        np.std(d, ddof=1),
        math.sqrt(np.mean(d ** 2)),
        100.0 * np.mean(ad > 20.0),
        100.0 * np.mean(ad > 50.0),
        float(np.sum(ad > 20.0)),
        float(np.sum(ad > 50.0)),
        sdnn / nn.mean(),
        np.median(np.abs(nn - med)),
        q75 - q25,
        ad.mean(),
        np.polyfit(np.arange(len(nn), dtype=float), nn, 1)[0],
    ]
    return FeatureBlock(HRV_TIME_NAMES, values, True)


def poincare_features(ibi: IbiSeries) -> FeatureBlock:
    nn = ibi.nn
    if len(nn) < 3:
        return _fallback(POINCARE_NAMES)
    var_d = np.var(np.diff(nn))
    sd1 = math.sqrt(0.5 * var_d)
    radicand = 2.0 * np.var(nn) - 0.5 * var_d
    quality = True
    if radicand < 0:
        radicand, quality = 0.0, False
    sd2 = math.sqrt(radicand)
    area = math.pi * sd1 * sd2
    if sd2 > 0:
        ratio = sd1 / sd2
    else:
        ratio, quality = 0.0, False
    if sd1 > 0:
        csi = sd2 / sd1
    else:
        csi, quality = 0.0, False
    prod = 16.0 * sd1 * sd2
    if prod > 0:
        cvi = math.log10(prod)
    else:
        cvi, quality = 0.0, False
    return FeatureBlock(POINCARE_NAMES, [sd1, sd2, ratio, area, csi, cvi], quality)


def tachogram(ibi: IbiSeries):
    """NN series cubic-interpolated to a uniform 4 Hz grid, mean removed."""
    t = ibi.nn_times_ms / 1000.0
    nn = ibi.nn
    grid = np.arange(t[0], t[-1] + 1e-12, 1.0 / TACHOGRAM_FS)
    values = interpolate.CubicSpline(t, nn)(grid)
    return grid, values - values.mean()


def _band_power(f, p, band):
    mask = (f >= band[0]) & (f < band[1])
    if mask.sum() < 2:
        return 0.0, 0.0
    fb, pb = f[mask], p[mask]
    return float(np.trapezoid(pb, fb)), float(fb[np.argmax(pb)])


def freq_domain_hrv(ibi: IbiSeries) -> FeatureBlock:
    nn = ibi.nn
    if len(nn) < 4:
        return _fallback(HRV_FREQ_NAMES)
    t = ibi.nn_times_ms / 1000.0
    if t[-1] - t[0] < MIN_FREQ_SPAN_S:
        return _fallback(HRV_FREQ_NAMES)
    _, x = tachogram(ibi)
    nperseg = min(len(x), int(TACHOGRAM_MAX_SEGMENT_S * TACHOGRAM_FS))
    nfft = max(nperseg, int(math.ceil(TACHOGRAM_FS / TACHOGRAM_GRID_HZ)))
    f, p = signal.welch(x, fs=TACHOGRAM_FS, window="hann", nperseg=nperseg, noverlap=nperseg // 2, nfft=nfft)
    vlf, _ = _band_power(f, p, VLF_BAND)
    lf, lf_peak = _band_power(f, p, LF_BAND)
    hf, hf_peak = _band_power(f, p, HF_BAND)
    total = vlf + lf + hf
    resolution = TACHOGRAM_FS / nperseg
    quality = all(hi - lo >= resolution for lo, hi in (VLF_BAND, LF_BAND, HF_BAND))
    lfhf = lf + hf
    if lfhf > POWER_FLOOR and hf > POWER_FLOOR:
        lf_norm, hf_norm, ratio = lf / lfhf, hf / lfhf, lf / hf
    elif lfhf > POWER_FLOOR:
        lf_norm, hf_norm, ratio, quality = lf / lfhf, hf / lfhf, 0.0, False
    else:
        lf_norm = hf_norm = ratio = 0.0
        quality = False
    if total > POWER_FLOOR:
        rel = [vlf / total, lf / total, hf / total]
    else:
        rel, quality = [0.0, 0.0, 0.0], False
    ln_lf = math.log(lf) if lf > POWER_FLOOR else 0.0
    ln_hf = math.log(hf) if hf > POWER_FLOOR else 0.0
    if lf <= POWER_FLOOR:
        lf_peak = 0.0
    if hf <= POWER_FLOOR:
        hf_peak = 0.0
    values = [vlf, lf, hf, total, lf_norm, hf_norm, ratio, *rel, lf_peak, hf_peak, ln_lf, ln_hf]
    return FeatureBlock(HRV_FREQ_NAMES, values, quality)


def nonlinear_hrv(ibi: IbiSeries) -> FeatureBlock:
    poincare = poincare_features(ibi)
    nn = ibi.nn
    quality = poincare.quality
    if len(nn) >= 4:
        ae, se = app_and_sample_entropy(nn)
        zc_rate = zero_crossings(nn) / (len(nn) - 1)
        idx = np.arange(len(nn), dtype=float)
        resid = nn - np.polyval(np.polyfit(idx, nn, 1), idx)
        extra = [se.value, ae.value, zc_rate, float(np.std(resid))]
        quality = quality and se.quality and ae.quality
    else:
        extra, quality = [0.0, 0.0, 0.0, 0.0], False
    return FeatureBlock(HRV_NONLINEAR_NAMES, list(poincare.values) + extra, quality)


def _peaks_from_ibi(sig: PulseSignal, ibi: IbiSeries) -> PeakList:
    idx = np.rint(ibi.beat_times_ms * sig.fs / 1000.0).astype(np.int64)
    idx = np.clip(idx, 0, len(sig.samples) - 1)
    return PeakList(idx, np.asarray(sig.samples)[idx])


def pulse_features(sig: PulseSignal, ibi: IbiSeries) -> FeatureBlock:
    peaks = _peaks_from_ibi(sig, ibi)
    quality = True
    try:
        hr = spectral_heart_rate(sig).value
    except TooShort:
        hr, quality = 0.0, False
    try:
        br = breathing_rate(sig, peaks).value
    except InsufficientBeats:
        br, quality = 0.0, False
    snr = sig.snr_db
    if not math.isfinite(snr):
        snr = math.copysign(SNR_CLIP_DB, snr) if not math.isnan(snr) else 0.0
    snr = float(np.clip(snr, -SNR_CLIP_DB, SNR_CLIP_DB))
    amp = float(np.mean(peaks.amplitudes)) if len(peaks) else 0.0
    return FeatureBlock(PULSE_NAMES, [hr, br, snr, amp], quality)


def hrv_vector(sig: PulseSignal, ibi: IbiSeries, registry: Registry | str = CURRENT_VERSION) -> FeatureBlock:
    """The 49 heart-related slots in registry order.

    Block quality follows the beat guard (at least three accepted
    intervals). Frequency-domain resolution, Poincare ratio and breathing
    confidence fallbacks fill their slots but do not flag the block, since
    they are structural for short windows.
    """
    if isinstance(registry, str):
        registry = load_registry(registry)
    slots = registry.hrv_slots
    if ibi is None or len(ibi.nn) < 3:
        return FeatureBlock(slots, np.zeros(len(slots)), False)
    blocks = [time_domain_hrv(ibi), freq_domain_hrv(ibi), nonlinear_hrv(ibi), pulse_features(sig, ibi)]
    merged = FeatureBlock.concat(blocks).as_dict()
    values = np.array([merged[name] for name in slots])
    finite = np.isfinite(values)
    values[~finite] = 0.0
    return FeatureBlock(slots, values, blocks[0].quality and bool(finite.all()))
