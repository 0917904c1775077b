"""Deterministic synthetic traces and cohorts with planted physiology.

Skin reflectance falls as blood volume rises, so the reflectance pulse that
modulates the colour channels is the negated blood-volume waveform. Ground
truth beat times are the systolic peaks of the blood-volume waveform.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import InvalidConfig
from .ingest import RgbTrace, SubjectRecord, atomic_write_text, manifest_text, trace_text

RISE_FRACTION = 0.3
DECAY_TAU = 0.25
DEFAULT_BASELINE = (160.0, 115.0, 95.0)
# relative pulsatile strength of R, G, B in skin reflectance
SKIN_PULSE_RATIOS = (0.33, 0.77, 0.53)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    duration_s: float = 60.0
    fps: float = 30.0
    hr_base: float = 72.0
    rsa_amp_ms: float = 30.0
    rsa_freq_hz: float = 0.25
    pulse_amp: tuple = tuple(0.03 * r for r in SKIN_PULSE_RATIOS)
    drift_amp: float = 0.01
    drift_freq_hz: float = 0.05
    noise_sigma: float = 0.001
    am_depth: float = 0.2
    am_freq_hz: float = 0.25
    n_regions: int = 2
    baseline: tuple = DEFAULT_BASELINE
    # when set, RR intervals cycle through this sequence instead of hr_base/RSA
    rr_sequence_ms: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "pulse_amp", tuple(float(a) for a in self.pulse_amp))
        object.__setattr__(self, "baseline", tuple(float(b) for b in self.baseline))
        if self.rr_sequence_ms is not None:
            object.__setattr__(self, "rr_sequence_ms", tuple(float(r) for r in self.rr_sequence_ms))
        self.validate()

    def validate(self) -> None:
        if not 30 <= self.hr_base <= 220:
            raise InvalidConfig(f"hr_base {self.hr_base} outside [30, 220]")
        if not 0.05 <= self.rsa_freq_hz <= 0.5:
            raise InvalidConfig(f"rsa_freq_hz {self.rsa_freq_hz} outside [0.05, 0.5]")
        if len(self.pulse_amp) != 3 or len(self.baseline) != 3:
            raise InvalidConfig("pulse_amp and baseline need three channels")
        amps = (self.rsa_amp_ms, self.drift_amp, self.noise_sigma, self.am_depth, *self.pulse_amp)
        if any(not math.isfinite(a) or a < 0 for a in amps):
            raise InvalidConfig("amplitudes must be finite and non-negative")
        if any(not math.isfinite(b) or b <= 0 for b in self.baseline):
            raise InvalidConfig("baseline channel levels must be positive")
        if not (self.duration_s > 0 and self.fps > 0 and math.isfinite(self.duration_s * self.fps)):
            raise InvalidConfig("duration_s and fps must be positive")
        if self.drift_freq_hz < 0 or self.am_freq_hz < 0:
            raise InvalidConfig("modulation frequencies must be non-negative")
        if self.n_regions < 1:
            raise InvalidConfig("n_regions must be >= 1")
        if 60.0 / self.hr_base <= self.rsa_amp_ms / 1000.0:
            raise InvalidConfig("rsa_amp_ms must be smaller than the base RR interval")
        if self.rr_sequence_ms is not None and (
            not self.rr_sequence_ms or any(not math.isfinite(r) or r <= 0 for r in self.rr_sequence_ms)
        ):
            raise InvalidConfig("rr_sequence_ms must hold positive intervals")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown SynthConfig fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("pulse_amp", "baseline", "rr_sequence_ms"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("pulse_amp", "baseline", "rr_sequence_ms"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


@dataclass(frozen=True)
class SynthGroundTruth:
    beat_times_s: tuple
    ibi_ms: tuple
    hr_mean_bpm: float
    br_brpm: float
    sdnn_ms: float

    def to_dict(self) -> dict:
        return {
            "beat_times_s": list(self.beat_times_s),
            "ibi_ms": list(self.ibi_ms),
            "hr_mean_bpm": self.hr_mean_bpm,
            "br_brpm": self.br_brpm,
            "sdnn_ms": self.sdnn_ms,
        }


def beat_times(cfg: SynthConfig) -> np.ndarray:
    """Beat (systolic peak) times covering ``[-RR, duration + RR]``."""
    base_rr = 60.0 / cfg.hr_base
    k = 0
    if cfg.rr_sequence_ms is not None:
        # the last interval leads into a beat at t = 0, so the in-window sequence starts at element 0
        k = len(cfg.rr_sequence_ms) - 1
        base_rr = cfg.rr_sequence_ms[k] / 1000.0
    t = -base_rr
    times = [t]
    while t <= cfg.duration_s + 2.5:
        if cfg.rr_sequence_ms is not None:
            rr = cfg.rr_sequence_ms[k % len(cfg.rr_sequence_ms)] / 1000.0
        else:
            rr = base_rr + (cfg.rsa_amp_ms / 1000.0) * math.sin(2 * math.pi * cfg.rsa_freq_hz * t)
        t = t + rr
        times.append(t)
        k += 1
    return np.asarray(times)


def blood_volume_wave(t: np.ndarray, beats: np.ndarray) -> np.ndarray:
    """Asymmetric beat template equal to 1 at every beat time.

    Between beats the wave decays exponentially, then rises over the last
    30% of the interval with a raised-cosine edge up to the next peak.
    """
    k = np.clip(np.searchsorted(beats, t, side="right") - 1, 0, len(beats) - 2)
    rr = beats[k + 1] - beats[k]
    u = (t - beats[k]) / rr
    floor = math.exp(-(1.0 - RISE_FRACTION) / DECAY_TAU)
    decay = np.exp(-u / DECAY_TAU)
    edge = (u - (1.0 - RISE_FRACTION)) / RISE_FRACTION
    rise = floor + (1.0 - floor) * 0.5 * (1.0 - np.cos(np.pi * np.clip(edge, 0.0, 1.0)))
    return np.where(u < 1.0 - RISE_FRACTION, decay, rise)


def synth_trace(cfg: SynthConfig) -> tuple:
    """Generate an ``RgbTrace`` and the ground truth of its planted beats."""
    cfg.validate()
    n = int(round(cfg.duration_s * cfg.fps))
    if n < 2:
        raise InvalidConfig("duration_s * fps must give at least two frames")
    rng = np.random.default_rng(cfg.seed)
    t = np.arange(n) / cfg.fps
    beats = beat_times(cfg)
    reflectance = 0.5 - blood_volume_wave(t, beats)
    drift = cfg.drift_amp * np.sin(2 * np.pi * cfg.drift_freq_hz * t)
    envelope = 1.0 + cfg.am_depth * np.sin(2 * np.pi * cfg.am_freq_hz * t)
    noise = rng.standard_normal((cfg.n_regions, n, 3))

    samples = np.empty((cfg.n_regions, n, 3))
    for j in range(cfg.n_regions):
        # later regions carry a weaker pulse and more noise
        gain = max(1.0 - 0.35 * j, 0.2)
        noise_scale = 1.0 + 0.5 * j
        for c in range(3):
            level = cfg.baseline[c] * (1.0 - 0.05 * j)
            mod = drift + gain * cfg.pulse_amp[c] * envelope * reflectance
            samples[j, :, c] = level * (1.0 + mod + cfg.noise_sigma * noise_scale * noise[j, :, c])
    np.clip(samples, 0.0, 255.0, out=samples)
    trace = RgbTrace(float(cfg.fps), tuple(range(cfg.n_regions)), samples)

    inside = beats[(beats >= 0.0) & (beats < cfg.duration_s)]
    ibi = np.diff(inside) * 1000.0
    if len(ibi) < 2:
        raise InvalidConfig("duration too short for two inter-beat intervals")
    truth = SynthGroundTruth(
        beat_times_s=tuple(float(b) for b in inside),
        ibi_ms=tuple(float(i) for i in ibi),
        hr_mean_bpm=float(60000.0 / np.mean(ibi)),
        br_brpm=float(60.0 * (cfg.am_freq_hz if cfg.am_depth > 0 else cfg.rsa_freq_hz)),
        sdnn_ms=float(np.std(ibi, ddof=1)),
    )
    return trace, truth


@dataclass(frozen=True)
class ScoreMap:
    """Planted label map ``intercept + sdnn_coef*sdnn + hr_coef*(hr - hr_ref)``."""

    intercept: float = 45.0
    sdnn_coef: float = -0.9
    hr_coef: float = 0.25
    hr_ref: float = 60.0

    def __call__(self, sdnn_ms: float, hr_mean_bpm: float) -> float:
        return self.intercept + self.sdnn_coef * sdnn_ms + self.hr_coef * (hr_mean_bpm - self.hr_ref)

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_SCORE_MAP = ScoreMap()


@dataclass(frozen=True)
class CohortSpec:
    """Ranges from which per-subject synthesis parameters are drawn."""

    duration_s: float = 60.0
    fps: float = 30.0
    hr_range: tuple = (50.0, 110.0)
    rsa_amp_range: tuple = (15.0, 70.0)
    # RSA depth is drawn at this heart rate and scaled by rsa_ref_hr / hr, so the
    # RR modulation is a fixed fraction of the base interval
    rsa_ref_hr: Optional[float] = 60.0
    rsa_freq_range: tuple = (0.15, 0.35)
    am_depth_range: tuple = (0.1, 0.3)
    noise_range: tuple = (0.0001, 0.0004)
    drift_amp_range: tuple = (0.0, 0.02)
    drift_freq_range: tuple = (0.02, 0.1)
    n_regions: int = 2
    label_noise: float = 3.0

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass
class Cohort:
    records: list
    traces: list
    truths: list
    configs: list
    seed: int
    spec: CohortSpec
    score_map: ScoreMap = field(default_factory=ScoreMap)

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "n_subjects": len(self.records),
            "score_map": {
                "formula": "clamp(round(intercept + sdnn_coef*sdnn_ms + hr_coef*(hr_mean_bpm - hr_ref) + N(0, label_noise)), 0, 63)",
                **self.score_map.to_dict(),
                "label_noise": self.spec.label_noise,
            },
            "cohort_spec": self.spec.to_dict(),
            "subjects": [
                {"video_id": r.video_id, "config": c.to_dict(), "sdnn_ms": g.sdnn_ms, "hr_mean_bpm": g.hr_mean_bpm}
                for r, c, g in zip(self.records, self.configs, self.truths)
            ],
        }


def planted_label(score_map: Callable, sdnn_ms: float, hr_mean_bpm: float, noise: float) -> int:
    raw = score_map(sdnn_ms, hr_mean_bpm) + noise
    return int(min(max(round(raw), 0), 63))


def synth_cohort(n_subjects: int, seed: int, score_map: Callable = DEFAULT_SCORE_MAP,
                 spec: CohortSpec = CohortSpec(), overrides: Optional[dict] = None) -> Cohort:
    """Draw ``n_subjects`` subjects; splits rotate train, dev, test."""
    if n_subjects < 2:
        raise InvalidConfig("n_subjects must be >= 2")
    children = np.random.SeedSequence(seed).spawn(n_subjects)
    records, traces, truths, configs = [], [], [], []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        u = lambda lo_hi: float(rng.uniform(*lo_hi))  # noqa: E731
        rsa_freq = u(spec.rsa_freq_range)
        hr = u(spec.hr_range)
        rsa_amp = u(spec.rsa_amp_range)
        if spec.rsa_ref_hr:
            rsa_amp *= spec.rsa_ref_hr / hr
        cfg = SynthConfig(
            seed=int(rng.integers(0, 2**31 - 1)),
            duration_s=spec.duration_s,
            fps=spec.fps,
            hr_base=hr,
            rsa_amp_ms=rsa_amp,
            rsa_freq_hz=rsa_freq,
            am_depth=u(spec.am_depth_range),
            am_freq_hz=rsa_freq,
            noise_sigma=u(spec.noise_range),
            drift_amp=u(spec.drift_amp_range),
            drift_freq_hz=u(spec.drift_freq_range),
            n_regions=spec.n_regions,
        )
        label_noise = float(rng.normal(0.0, spec.label_noise)) if spec.label_noise > 0 else 0.0
        if overrides:
            cfg = replace(cfg, **overrides)
        trace, truth = synth_trace(cfg)
        video_id = f"s{seed}_{i:03d}"
        records.append(SubjectRecord(
            subject_id=f"subj{i:03d}",
            video_id=video_id,
            task="none",
            split=("train", "dev", "test")[i % 3],
            bdi_score=planted_label(score_map, truth.sdnn_ms, truth.hr_mean_bpm, label_noise),
            fps=cfg.fps,
            trace_path=f"traces/{video_id}.csv",
        ))
        traces.append(trace)
        truths.append(truth)
        configs.append(cfg)
    sm = score_map if isinstance(score_map, ScoreMap) else DEFAULT_SCORE_MAP
    return Cohort(records, traces, truths, configs, seed, spec, sm)


def write_cohort(cohort: Cohort, out_dir) -> Path:
    """Write manifest, traces, ground-truth sidecars and cohort metadata."""
    out = Path(out_dir)
    for rec, trace, truth, cfg in zip(cohort.records, cohort.traces, cohort.truths, cohort.configs):
        atomic_write_text(out / rec.trace_path, trace_text(trace))
        sidecar = {"video_id": rec.video_id, **truth.to_dict(), "config": cfg.to_dict()}
        atomic_write_text(out / "truth" / f"{rec.video_id}.json", json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    atomic_write_text(out / "cohort.json", json.dumps(cohort.metadata(), indent=1, sort_keys=True) + "\n")
    manifest = out / "manifest.csv"
    atomic_write_text(manifest, manifest_text(cohort.records))
    return manifest
