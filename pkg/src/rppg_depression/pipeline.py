"""Sliding-window feature extraction and per-video aggregation."""
from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .complexity import FeatureBlock, entropy_features, fractal_block, statistical_features
from .errors import (
    EmptyPredictions,
    InsufficientBeats,
    InsufficientSamples,
    MalformedTrace,
    NoPeaks,
    TooShort,
    ZeroMeanChannel,
)
from .hrv import hrv_vector
from .ingest import RgbTrace, atomic_write_text
from .pulse import detect_peaks, peaks_to_ibi
from .registry import CURRENT_VERSION, Registry, canonical_hash, load_registry
from .rppg import FilterSpec, best_region, region_pulses

log = logging.getLogger(__name__)

SWEEP_WINDOWS_S = (5.0, 6.0, 8.0, 10.0, 15.0)
STRIDE_S = 0.33
BDI_MIN, BDI_MAX = 0.0, 63.0


@dataclass(frozen=True)
class WindowSpec:
    window_s: float = 6.0
    stride_frames: Optional[int] = None

    def __post_init__(self):
        if not self.window_s > 0:
            raise ValueError("window_s must be positive")
        if self.stride_frames is not None and self.stride_frames < 1:
            raise ValueError("stride_frames must be >= 1")

    def length(self, fps: float) -> int:
        return int(round(self.window_s * fps))

    def stride(self, fps: float) -> int:
        if self.stride_frames is not None:
            return self.stride_frames
        return max(int(round(STRIDE_S * fps)), 1)


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterSpec = FilterSpec()
    detrend_s: Optional[float] = 2.0
    registry_version: str = CURRENT_VERSION
    subsample_peaks: bool = True  # parabolic beat timing below one frame

    def to_dict(self) -> dict:
        return {"filter": asdict(self.filter), "detrend_s": self.detrend_s, "registry_version": self.registry_version,
                "subsample_peaks": self.subsample_peaks}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(FilterSpec(**d.get("filter", {})), d.get("detrend_s", 2.0),
                   d.get("registry_version", CURRENT_VERSION), bool(d.get("subsample_peaks", True)))


@dataclass
class WindowedFeatures:
    video_id: str
    columns: tuple
    registry_hash: str
    registry_version: str
    window_index: np.ndarray
    t_start_s: np.ndarray
    quality: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.window_index)

    def keys(self) -> list:
        return [(self.video_id, int(i)) for i in self.window_index]


def make_windows(n_samples: int, fps: float, spec: WindowSpec = WindowSpec()) -> list:
    w = spec.length(fps)
    if w < 1 or n_samples < w:
        raise InsufficientSamples(f"{n_samples} samples cannot hold a {spec.window_s} s window at {fps} fps")
    stride = spec.stride(fps)
    return [(s, s + w) for s in range(0, n_samples - w + 1, stride)]


def _fallback_hrv(registry: Registry) -> FeatureBlock:
    slots = registry.hrv_slots
    return FeatureBlock(slots, np.zeros(len(slots)), False)


def window_features(trace: RgbTrace, start: int, end: int, config: PipelineConfig,
                    registry: Registry) -> FeatureBlock:
    """All feature blocks for one window, in registry order."""
    pulses = region_pulses(trace, start, end, config.filter, config.detrend_s)
    sig = pulses[best_region(pulses)]
    x = sig.samples
    blocks = [statistical_features(x), fractal_block(x, sig.fs), entropy_features(x, sig.fs)]
    try:
        ibi = peaks_to_ibi(detect_peaks(sig), sig.fs, config.subsample_peaks)
        blocks.append(hrv_vector(sig, ibi, registry))
    except (NoPeaks, InsufficientBeats):
        blocks.append(_fallback_hrv(registry))
    merged = FeatureBlock.concat(blocks)
    if merged.names != registry.columns:
        raise RuntimeError("feature blocks do not match the registry column order")
    return merged


def extract_features(trace: RgbTrace, spec: WindowSpec = WindowSpec(), config: PipelineConfig = PipelineConfig(),
                     video_id: str = "") -> WindowedFeatures:
    registry = load_registry(config.registry_version)
    windows = make_windows(trace.n_frames, trace.fps, spec)
    values = np.empty((len(windows), len(registry)))
    quality = np.zeros(len(windows), dtype=bool)
    for i, (s, e) in enumerate(windows):
        try:
            block = window_features(trace, s, e, config, registry)
        except (ZeroMeanChannel, TooShort) as exc:
            log.debug("window %d of %s falls back: %s", i, video_id, exc)
            values[i] = registry.fallbacks
            continue
        values[i] = block.values
        quality[i] = block.quality
    return WindowedFeatures(
        video_id=video_id,
        columns=registry.columns,
        registry_hash=registry.hash,
        registry_version=registry.version,
        window_index=np.arange(len(windows)),
        t_start_s=np.array([s / trace.fps for s, _ in windows]),
        quality=quality,
        values=values,
        meta={"window_s": spec.window_s, "stride_frames": spec.stride(trace.fps), "fps": trace.fps,
              "pipeline": config.to_dict()},
    )


def window_sweep(trace: RgbTrace, windows_s: Sequence[float] = SWEEP_WINDOWS_S,
                 config: PipelineConfig = PipelineConfig(), video_id: str = "") -> dict:
    """Extract features at each window length; keys are the window lengths."""
    return {w: extract_features(trace, WindowSpec(window_s=w), config, video_id) for w in windows_s}


def video_score(window_predictions) -> float:
    preds = np.asarray(window_predictions, dtype=float).ravel()
    if preds.size == 0:
        raise EmptyPredictions("no window predictions")
    return float(np.clip(preds.mean(), BDI_MIN, BDI_MAX))


def _fmt(v: float) -> str:
    return repr(float(v))


def feature_file_text(wf: WindowedFeatures, extra_meta: Optional[dict] = None) -> str:
    meta = {"tool": f"rppg_depression {__version__}", **wf.meta, **(extra_meta or {})}
    lines = [
        f"# registry={wf.registry_hash} version={wf.registry_version}",
        "# meta=" + json.dumps(meta, sort_keys=True, separators=(",", ":")),
        ",".join(("video_id", "window_index", "t_start_s", "quality") + tuple(wf.columns)),
    ]
    for i in range(len(wf)):
        row = [wf.video_id, str(int(wf.window_index[i])), _fmt(wf.t_start_s[i]), "1" if wf.quality[i] else "0"]
        row.extend(_fmt(v) for v in wf.values[i])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_feature_file(wf: WindowedFeatures, path, extra_meta: Optional[dict] = None) -> None:
    atomic_write_text(path, feature_file_text(wf, extra_meta))


def columns_hash(columns) -> str:
    return canonical_hash({"columns": list(columns)})


def read_feature_file(path) -> WindowedFeatures:
    """Parse a feature CSV. Files without a registry comment (external
    blocks) get a hash derived from their column names."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    reg_hash, reg_version, meta = None, None, {}
    body_start = 0
    for body_start, line in enumerate(lines):
        if not line.startswith("#"):
            break
        content = line[1:].strip()
        if content.startswith("registry="):
            parts = dict(p.split("=", 1) for p in content.split())
            reg_hash, reg_version = parts.get("registry"), parts.get("version")
        elif content.startswith("meta="):
            meta = json.loads(content[len("meta="):])
    header = lines[body_start].split(",")
    if tuple(header[:4]) != ("video_id", "window_index", "t_start_s", "quality"):
        raise MalformedTrace(f"{path}: not a feature file")
    columns = tuple(header[4:])
    rows = [ln.split(",") for ln in lines[body_start + 1:] if ln]
    if any(len(r) != len(header) for r in rows):
        raise MalformedTrace(f"{path}: ragged feature rows")
    video_ids = {r[0] for r in rows}
    if len(video_ids) > 1:
        raise MalformedTrace(f"{path}: feature file mixes videos")
    if rows:
        numeric = np.loadtxt(io.StringIO("\n".join(",".join(r[1:]) for r in rows)), delimiter=",", ndmin=2)
    else:
        numeric = np.empty((0, len(header) - 1))
    return WindowedFeatures(
        video_id=rows[0][0] if rows else path.stem,
        columns=columns,
        registry_hash=reg_hash or columns_hash(columns),
        registry_version=reg_version or "external",
        window_index=numeric[:, 0].astype(np.int64),
        t_start_s=numeric[:, 1],
        quality=numeric[:, 2] != 0,
        values=numeric[:, 3:],
        meta=meta,
    )
