"""Cohort manifests and per-region RGB trace files."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DuplicateVideoId,
    MalformedManifest,
    MalformedTrace,
    NonFiniteSample,
    RaggedRegions,
    ScoreOutOfRange,
)

MANIFEST_HEADER = ("subject_id", "video_id", "task", "split", "bdi_score", "fps", "trace_path")
TRACE_HEADER = ("frame_idx", "region_id", "r_mean", "g_mean", "b_mean")
TASKS = ("freeform", "northwind", "none")
SPLITS = ("train", "dev", "test")
BDI_MIN, BDI_MAX = 0, 63


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    video_id: str
    task: str
    split: str
    bdi_score: Optional[int]
    fps: float
    trace_path: str


@dataclass(frozen=True, eq=False)
class RgbTrace:
    """Per-region mean RGB values.

    ``samples`` has shape ``(n_regions, n_frames, 3)``; frame ``k`` sits at
    ``k / fps`` seconds.
    """

    fps: float
    region_ids: tuple
    samples: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    def region(self, region_id: int) -> np.ndarray:
        return self.samples[self.region_ids.index(region_id)]


@dataclass
class CohortManifest:
    records: list
    path: Optional[Path] = None

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def by_split(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def trace_file(self, record: SubjectRecord) -> Path:
        base = self.path.parent if self.path is not None else Path(".")
        return base / record.trace_path


def _parse_row(row: dict, lineno: int) -> SubjectRecord:
    task = row["task"].strip()
    split = row["split"].strip()
    if task not in TASKS:
        raise MalformedManifest(f"line {lineno}: unknown task {task!r}")
    if split not in SPLITS:
        raise MalformedManifest(f"line {lineno}: unknown split {split!r}")
    raw_score = row["bdi_score"].strip()
    if raw_score == "":
        if split == "train":
            raise MalformedManifest(f"line {lineno}: train rows need a bdi_score")
        score = None
    else:
        try:
            score = int(raw_score)
        except ValueError:
            raise MalformedManifest(f"line {lineno}: bdi_score {raw_score!r} is not an integer") from None
        if not BDI_MIN <= score <= BDI_MAX:
            raise ScoreOutOfRange(f"line {lineno}: bdi_score {score} outside [0, 63]")
    try:
        fps = float(row["fps"])
    except ValueError:
        raise MalformedManifest(f"line {lineno}: fps {row['fps']!r} is not a number") from None
    if not (math.isfinite(fps) and fps > 0):
        raise MalformedManifest(f"line {lineno}: fps must be finite and positive")
    subject_id = row["subject_id"].strip()
    video_id = row["video_id"].strip()
    trace_path = row["trace_path"].strip()
    if not subject_id or not video_id or not trace_path:
        raise MalformedManifest(f"line {lineno}: empty identifier field")
    return SubjectRecord(subject_id, video_id, task, split, score, fps, trace_path)


def load_manifest(path) -> CohortManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedManifest(f"cannot read manifest {path}: {exc}") from None
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
        raise MalformedManifest(f"manifest header must be {','.join(MANIFEST_HEADER)}")
    records = []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        if None in row or any(v is None for v in row.values()):
            raise MalformedManifest(f"line {lineno}: wrong number of fields")
        rec = _parse_row(row, lineno)
        if rec.video_id in seen:
            raise DuplicateVideoId(f"line {lineno}: duplicate video_id {rec.video_id!r}")
        seen.add(rec.video_id)
        records.append(rec)
    return CohortManifest(records, path)


def manifest_text(records: Iterable[SubjectRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for r in records:
        score = "" if r.bdi_score is None else str(r.bdi_score)
        writer.writerow([r.subject_id, r.video_id, r.task, r.split, score, repr(float(r.fps)), r.trace_path])
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(records: Sequence[SubjectRecord], path) -> None:
    atomic_write_text(path, manifest_text(records))


def trace_text(trace: RgbTrace) -> str:
    lines = [",".join(TRACE_HEADER)]
    for rid, region in zip(trace.region_ids, trace.samples):
        for k, (r, g, b) in enumerate(region):
            lines.append(f"{k},{rid},{float(r)!r},{float(g)!r},{float(b)!r}")
    return "\n".join(lines) + "\n"


def write_trace(trace: RgbTrace, path) -> None:
    atomic_write_text(path, trace_text(trace))


def validate_trace(trace: RgbTrace) -> None:
    s = trace.samples
    if s.ndim != 3 or s.shape[2] != 3 or s.shape[0] != len(trace.region_ids):
        raise MalformedTrace("samples must have shape (n_regions, n_frames, 3)")
    if not np.all(np.isfinite(s)):
        raise NonFiniteSample("trace contains non-finite samples")
    if np.any(s < 0):
        raise MalformedTrace("channel means must be non-negative")
    if not (math.isfinite(trace.fps) and trace.fps > 0):
        raise MalformedTrace("fps must be finite and positive")


def load_trace(path, expected_fps: float) -> RgbTrace:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if tuple(h.strip() for h in header.split(",")) != TRACE_HEADER:
                raise MalformedTrace(f"{path}: trace header must be {','.join(TRACE_HEADER)}")
            body = fh.read()
    except OSError as exc:
        raise MalformedTrace(f"cannot read trace {path}: {exc}") from None
    try:
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise MalformedTrace(f"{path}: {exc}") from None
    if data.size == 0 or data.shape[1] != 5:
        raise MalformedTrace(f"{path}: expected 5 columns and at least one row")
    if not np.all(np.isfinite(data[:, :2])):
        raise MalformedTrace(f"{path}: non-finite frame or region index")
    if not np.all(np.isfinite(data[:, 2:])):
        raise NonFiniteSample(f"{path}: non-finite channel value")
    frames = data[:, 0]
    regions = data[:, 1]
    if np.any(frames != np.round(frames)) or np.any(regions != np.round(regions)):
        raise MalformedTrace(f"{path}: frame_idx and region_id must be integers")
    region_ids = sorted({int(r) for r in regions})
    per_region = []
    lengths = []
    for rid in region_ids:
        rows = data[regions == rid]
        rows = rows[np.argsort(rows[:, 0], kind="stable")]
        idx = rows[:, 0].astype(np.int64)
        if not np.array_equal(idx, np.arange(len(idx))):
            raise MalformedTrace(f"{path}: region {rid} frames are not contiguous from 0 (non-uniform timestamps)")
        per_region.append(rows[:, 2:])
        lengths.append(len(rows))
    if len(set(lengths)) != 1:
        raise RaggedRegions(f"{path}: regions have unequal sample counts {dict(zip(region_ids, lengths))}")
    trace = RgbTrace(float(expected_fps), tuple(region_ids), np.stack(per_region))
    validate_trace(trace)
    return trace
