"""RGB traces to pulse signals: detrend, bandpass, CHROM, region selection."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np
from scipy import signal

from .errors import BandInvalid, NonFiniteInput, TooShort, ZeroMeanChannel

SNR_PEAK_HALFWIDTH_HZ = 0.1
SNR_HARMONIC_HALFWIDTH_HZ = 0.2
PERIODOGRAM_GRID_HZ = 0.01
# normalised-unit pulses below this std are filter round-off, not signal
FLAT_PULSE_STD = 1e-10


@dataclass(frozen=True)
class FilterSpec:
    lo_hz: float = 0.7
    hi_hz: float = 3.5
    order: int = 4
    zero_phase: bool = True

    def check(self, fs: float) -> None:
        if not (0 < self.lo_hz < self.hi_hz < fs / 2):
            raise BandInvalid(f"need 0 < lo ({self.lo_hz}) < hi ({self.hi_hz}) < fs/2 ({fs / 2})")
        if self.order < 1:
            raise BandInvalid("filter order must be >= 1")


@dataclass(frozen=True, eq=False)
class PulseSignal:
    fs: float
    samples: np.ndarray
    band: tuple = (0.7, 3.5)
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    @cached_property
    def snr_db(self) -> float:
        """``pulse_snr_db`` of this signal, computed once."""
        return pulse_snr_db(self)


def _as_finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise NonFiniteInput("expected a 1-D series")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("series contains non-finite values")
    return x


def moving_mean(x: np.ndarray, span: int) -> np.ndarray:
    """Centered moving mean over an odd ``span`` along the last axis, mirror-padded at the edges."""
    half = span // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    padded = np.pad(x, pad, mode="reflect")
    c = np.zeros(padded.shape[:-1] + (padded.shape[-1] + 1,))
    np.cumsum(padded, axis=-1, out=c[..., 1:])
    return (c[..., span:] - c[..., :-span]) / span


def detrend(x, fs: float, window_s: float = 2.0) -> np.ndarray:
    return _detrend(_as_finite(x), fs, window_s)


def _detrend(x: np.ndarray, fs: float, window_s: float) -> np.ndarray:
    span = int(round(window_s * fs))
    if span < 1 or x.shape[-1] < span:
        raise TooShort(f"detrend needs at least {span} samples, got {x.shape[-1]}")
    if span % 2 == 0:
        span += 1
    if span == 1:
        return x - x
    return x - moving_mean(x, span)


@lru_cache(maxsize=64)
def _sos(fs: float, spec: FilterSpec) -> np.ndarray:
    spec.check(fs)
    return signal.butter(spec.order, [spec.lo_hz, spec.hi_hz], btype="bandpass", fs=fs, output="sos")


@lru_cache(maxsize=64)
def _sos_zi(fs: float, spec: FilterSpec) -> np.ndarray:
    return signal.sosfilt_zi(_sos(fs, spec))


def bandpass(x, fs: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Butterworth bandpass, forward-backward when ``spec.zero_phase``."""
    return _bandpass(_as_finite(x), fs, spec)


def _bandpass(x: np.ndarray, fs: float, spec: FilterSpec) -> np.ndarray:
    """Rows of ``x`` are filtered independently."""
    sos = _sos(fs, spec)
    n = x.shape[-1]
    if n < 3 * spec.order:
        raise TooShort(f"bandpass needs at least {3 * spec.order} samples, got {n}")
    if not spec.zero_phase:
        return signal.sosfilt(sos, x)
    # same as sosfiltfilt(padtype="even") with the initial state cached
    edge = min(3 * (2 * len(sos) + 1), n - 1)
    zi = _sos_zi(fs, spec)
    if x.ndim > 1:
        zi = zi[:, None, :]
    ext = np.concatenate((x[..., edge:0:-1], x, x[..., -2:-edge - 2:-1]), axis=-1) if edge > 0 else x
    y, _ = signal.sosfilt(sos, ext, zi=zi * ext[..., :1])
    y, _ = signal.sosfilt(sos, y[..., ::-1], zi=zi * y[..., -1:])
    y = y[..., ::-1]
    return y[..., edge:y.shape[-1] - edge] if edge > 0 else y


def chrom_transform(window, fs: float, spec: FilterSpec = FilterSpec(),
                    detrend_s: Optional[float] = None, provenance: Optional[dict] = None) -> PulseSignal:
    """Chrominance pulse from an ``(n, 3)`` RGB window.

    Channels are normalised by their window means, combined into the two
    chrominance projections, optionally moving-mean detrended, bandpassed,
    and mixed with the std ratio ``alpha`` so intensity changes cancel.
    """
    rgb = np.asarray(window, dtype=float)
    if rgb.ndim != 2 or rgb.shape[1] != 3:
        raise NonFiniteInput("window must have shape (n, 3)")
    if not np.all(np.isfinite(rgb)):
        raise NonFiniteInput("window contains non-finite values")
    if rgb.shape[0] < 2 * fs:
        raise TooShort(f"chrom_transform needs >= 2 s of samples, got {rgb.shape[0]}")
    means = rgb.mean(axis=0)
    if np.any(means <= 0):
        raise ZeroMeanChannel("channel means must be positive")
    rn, gn, bn = (rgb / means).T
    xy = np.stack((3.0 * rn - 2.0 * gn, 1.5 * rn + gn - 1.5 * bn))
    if detrend_s is not None:
        xy = _detrend(xy, fs, detrend_s)
    xf, yf = _bandpass(xy, fs, spec)
    sy = np.std(yf)
    alpha = np.std(xf) / sy if sy >= 1e-12 else 0.0
    s = xf - alpha * yf
    s = s - s.mean()
    if np.std(s) < FLAT_PULSE_STD:
        s = np.zeros_like(s)
    prov = {"method": "chrom"}
    if provenance:
        prov.update(provenance)
    return PulseSignal(float(fs), s, (spec.lo_hz, spec.hi_hz), prov)


def padded_nfft(n: int, fs: float, grid_hz: float) -> int:
    return max(n, int(np.ceil(fs / grid_hz)))


def pulse_periodogram(sig: PulseSignal):
    """Hann periodogram on a zero-padded 0.01 Hz grid."""
    x = np.asarray(sig.samples, dtype=float)
    return signal.periodogram(x, fs=sig.fs, window="hann", nfft=padded_nfft(len(x), sig.fs, PERIODOGRAM_GRID_HZ),
                              detrend="constant", scaling="density")


def pulse_snr_db(sig: PulseSignal) -> float:
    """Power near the dominant in-band peak and its harmonic over the rest."""
    f, p = pulse_periodogram(sig)
    lo, hi = sig.band
    band = (f >= lo) & (f <= hi)
    if not np.any(band) or np.sum(p[band]) <= 0:
        return float("-inf")
    f0 = f[band][np.argmax(p[band])]
    near = (np.abs(f - f0) <= SNR_PEAK_HALFWIDTH_HZ) | (np.abs(f - 2 * f0) <= SNR_HARMONIC_HALFWIDTH_HZ)
    p_sig = np.sum(p[band & near])
    p_rest = np.sum(p[band & ~near])
    if p_rest <= 0:
        return float("inf")
    if p_sig <= 0:
        return float("-inf")
    return float(10.0 * np.log10(p_sig / p_rest))


def region_pulses(trace, start: int, end: int, spec: FilterSpec = FilterSpec(),
                  detrend_s: Optional[float] = None) -> dict:
    if not 0 <= start < end <= trace.n_frames:
        raise TooShort(f"window [{start}, {end}) invalid for {trace.n_frames} frames")
    out = {}
    for rid, region in zip(trace.region_ids, trace.samples):
        out[rid] = chrom_transform(region[start:end], trace.fps, spec, detrend_s,
                                   {"region_id": rid, "window_offset": start})
    return out


def best_region(pulses: dict) -> int:
    """Maximal SNR; ties go to the lowest region id."""
    best_id, best_snr = None, None
    for rid in sorted(pulses):
        snr = pulses[rid].snr_db
        if best_snr is None or snr > best_snr:
            best_id, best_snr = rid, snr
    return best_id


def select_best_region(trace, window: tuple, spec: FilterSpec = FilterSpec(),
                       detrend_s: Optional[float] = None) -> int:
    start, end = window
    return best_region(region_pulses(trace, start, end, spec, detrend_s))
