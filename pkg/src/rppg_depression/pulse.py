"""Systolic peaks, inter-beat intervals, heart rate and breathing rate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import signal

from .errors import InsufficientBeats, NoPeaks, TooShort
from .rppg import PulseSignal, padded_nfft

MIN_BEAT_S = 0.2727  # 220 bpm
IBI_MIN_MS = 272.7
IBI_MAX_MS = 2000.0
LOCAL_MEDIAN_SPAN = 5
LOCAL_MEDIAN_TOLERANCE = 0.30
PROMINENCE_SIGMA = 0.5
WELCH_SEGMENT_S = 4.0
WELCH_GRID_HZ = 0.01
ENVELOPE_FS = 4.0
BREATH_BAND = (0.1, 0.5)
MIN_ENVELOPE_DEPTH = 0.01


@dataclass(frozen=True, eq=False)
class PeakList:
    """Peak sample indices and amplitudes.

    ``positions`` holds sub-sample peak locations when the detector refined
    them; otherwise the integer indices serve as positions.
    """

    indices: np.ndarray
    amplitudes: np.ndarray
    positions: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.indices)

    @property
    def beat_positions(self) -> np.ndarray:
        if self.positions is None:
            return np.asarray(self.indices, dtype=float)
        return np.asarray(self.positions, dtype=float)


@dataclass(frozen=True, eq=False)
class IbiSeries:
    beat_times_ms: np.ndarray
    intervals_ms: np.ndarray
    accepted: np.ndarray

    @property
    def nn(self) -> np.ndarray:
        """Accepted intervals in order."""
        return self.intervals_ms[self.accepted]

    @property
    def nn_times_ms(self) -> np.ndarray:
        """Time stamp (closing beat) of each accepted interval."""
        return self.beat_times_ms[1:][self.accepted]


class RateEstimate(NamedTuple):
    value: float
    confident: bool


def min_peak_distance(fs: float) -> int:
    return max(int(round(MIN_BEAT_S * fs)), 1)


def detect_peaks(sig: PulseSignal) -> PeakList:
    x = np.asarray(sig.samples, dtype=float)
    if len(x) < 2 * sig.fs:
        raise TooShort(f"detect_peaks needs >= 2 s of samples, got {len(x)}")
    sd = np.std(x, ddof=1)
    if not np.isfinite(sd) or sd <= 0:
        raise NoPeaks("flat signal")
    z = (x - x.mean()) / sd
    idx, _ = signal.find_peaks(z, prominence=PROMINENCE_SIGMA, distance=min_peak_distance(sig.fs))
    if len(idx) < 2:
        raise NoPeaks(f"found {len(idx)} peaks")
    return PeakList(idx.astype(np.int64), x[idx], parabolic_positions(z, idx))


def parabolic_positions(z: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Vertex of the parabola through each peak and its two neighbours."""
    pos = idx.astype(float)
    inner = (idx > 0) & (idx < len(z) - 1)
    i = idx[inner]
    a, b, c = z[i - 1], z[i], z[i + 1]
    curv = a - 2.0 * b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        offset = np.where(curv < 0, 0.5 * (a - c) / curv, 0.0)
    pos[inner] += np.clip(offset, -0.5, 0.5)
    return pos


def _accept(intervals: np.ndarray) -> np.ndarray:
    """Range rule plus iterated 30% local-median rule.

    Neighbourhoods are formed among intervals still accepted, and the rule
    is repeated until nothing changes, so re-cleaning is a no-op.
    """
    ok = (intervals >= IBI_MIN_MS) & (intervals <= IBI_MAX_MS)
    half = LOCAL_MEDIAN_SPAN // 2
    while True:
        pos = np.flatnonzero(ok)
        vals = intervals[pos]
        bad = []
        for j in range(len(vals)):
            med = np.median(vals[max(0, j - half): j + half + 1])
            if abs(vals[j] - med) > LOCAL_MEDIAN_TOLERANCE * med:
                bad.append(pos[j])
        if not bad:
            return ok
        ok[bad] = False


def peaks_to_ibi(peaks: PeakList, fs: float, subsample: bool = False) -> IbiSeries:
    """Intervals from integer peak indices, or from refined positions when
    ``subsample`` is set."""
    if len(peaks) < 2:
        raise InsufficientBeats("need at least two peaks")
    pos = peaks.beat_positions if subsample else np.asarray(peaks.indices, dtype=float)
    beats = pos / fs * 1000.0
    intervals = np.diff(beats)
    return IbiSeries(beats, intervals, _accept(intervals.copy()))


def reclean(ibi: IbiSeries) -> IbiSeries:
    """Re-apply acceptance rules to the accepted intervals alone."""
    nn = ibi.nn
    return IbiSeries(np.concatenate(([0.0], np.cumsum(nn))), nn, _accept(nn.copy()))


def heart_rate(ibi: IbiSeries) -> float:
    nn = ibi.nn
    if len(nn) < 2:
        raise InsufficientBeats(f"need >= 2 accepted intervals, got {len(nn)}")
    return float(60000.0 / np.mean(nn))


def welch_spectrum(sig: PulseSignal):
    x = np.asarray(sig.samples, dtype=float)
    nperseg = min(int(round(WELCH_SEGMENT_S * sig.fs)), len(x))
    return signal.welch(x, fs=sig.fs, window="hann", nperseg=nperseg, noverlap=nperseg // 2,
                        nfft=padded_nfft(nperseg, sig.fs, WELCH_GRID_HZ), detrend="constant")


def spectral_heart_rate(sig: PulseSignal) -> RateEstimate:
    """Welch peak frequency inside the pulse band; confident when SNR >= 0 dB."""
    if len(sig.samples) < WELCH_SEGMENT_S * sig.fs:
        raise TooShort(f"spectral_heart_rate needs >= {WELCH_SEGMENT_S} s of samples")
    f, p = welch_spectrum(sig)
    lo, hi = sig.band
    band = (f >= lo) & (f <= hi)
    f_peak = f[band][np.argmax(p[band])]
    return RateEstimate(float(60.0 * f_peak), sig.snr_db >= 0.0)


def breathing_rate(sig: PulseSignal, peaks: PeakList) -> RateEstimate:
    """Respiratory rate from the amplitude envelope of the systolic peaks.

    The estimate is flagged low-confidence when the in-band peak holds less
    than twice the mean band power, when a stronger envelope component lies
    outside the band, or when the envelope barely moves (under 1% of the
    mean peak amplitude).
    """
    if len(peaks) < 4:
        raise InsufficientBeats(f"need >= 4 peaks, got {len(peaks)}")
    t_peaks = np.asarray(peaks.indices, dtype=float) / sig.fs
    amps = np.asarray(peaks.amplitudes, dtype=float)
    grid = np.arange(t_peaks[0], t_peaks[-1] + 1e-12, 1.0 / ENVELOPE_FS)
    envelope = np.interp(grid, t_peaks, amps)
    envelope = envelope - envelope.mean()
    nfft = padded_nfft(len(envelope), ENVELOPE_FS, 0.01)
    f, p = signal.periodogram(envelope, fs=ENVELOPE_FS, window="hann", nfft=nfft, detrend=False)
    band = (f >= BREATH_BAND[0]) & (f <= BREATH_BAND[1])
    pb = p[band]
    k = int(np.argmax(pb))
    mean_power = float(np.mean(pb))
    positive = f > 0
    dominant_in_band = pb[k] >= np.max(p[positive])
    modulated = np.std(envelope) >= MIN_ENVELOPE_DEPTH * abs(float(np.mean(amps)))
    confident = bool(mean_power > 0 and pb[k] >= 2.0 * mean_power and dominant_in_band and modulated)
    return RateEstimate(float(60.0 * f[band][k]), confident)
