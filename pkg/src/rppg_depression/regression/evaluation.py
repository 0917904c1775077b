"""MAE/RMSE reports and pre-/post-fusion."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ..errors import KeyMismatch, MalformedManifest, VideoSetMismatch
from ..ingest import atomic_write_text
from ..pipeline import BDI_MAX, BDI_MIN, WindowedFeatures
from ..registry import canonical_hash


@dataclass
class EvalReport:
    mae: float
    rmse: float
    per_video: list  # (video_id, truth, prediction, abs_error), ascending error
    per_window: Optional[list] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "n_videos": len(self.per_video),
            "meta": self.meta,
        }


def evaluate(preds: Mapping[str, float], truth: Mapping[str, float]) -> EvalReport:
    if set(preds) != set(truth):
        raise VideoSetMismatch(
            f"prediction/label video sets differ: {sorted(set(preds) ^ set(truth))[:5]}")
    if not preds:
        raise VideoSetMismatch("no videos to evaluate")
    rows = [(vid, float(truth[vid]), float(preds[vid]), abs(float(preds[vid]) - float(truth[vid])))
            for vid in sorted(preds)]
    err = np.array([r[2] - r[1] for r in rows])
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    rows.sort(key=lambda r: (r[3], r[0]))
    return EvalReport(mae, rmse, rows)


def per_video_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "video_id", "truth", "prediction", "abs_error"])
    for rank, (vid, t, p, e) in enumerate(report.per_video):
        w.writerow([rank, vid, repr(t), repr(p), repr(e)])
    return buf.getvalue()


def per_window_csv(rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video_id", "window_index", "t_start_s", "quality", "prediction"])
    for vid, idx, t0, q, p in rows:
        w.writerow([vid, int(idx), repr(float(t0)), int(bool(q)), repr(float(p))])
    return buf.getvalue()


def write_predictions(preds: Mapping[str, float], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video_id", "prediction"])
    for vid in sorted(preds):
        w.writerow([vid, repr(float(preds[vid]))])
    atomic_write_text(path, buf.getvalue())


def read_predictions(path) -> dict:
    path = Path(path)
    try:
        reader = csv.DictReader(io.StringIO(path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise MalformedManifest(f"cannot read prediction file {path}: {exc}") from None
    if tuple(reader.fieldnames or ()) != ("video_id", "prediction"):
        raise MalformedManifest(f"{path}: header must be video_id,prediction")
    out = {}
    for row in reader:
        try:
            out[row["video_id"]] = float(row["prediction"])
        except (TypeError, ValueError):
            raise MalformedManifest(f"{path}: bad prediction row {row}") from None
    return out


def fuse_post(streams: Sequence[Mapping[str, float]]) -> dict:
    """Per-video unweighted mean of the score streams, clamped to [0, 63]."""
    if not streams:
        raise VideoSetMismatch("no score streams to fuse")
    ids = set(streams[0])
    for s in streams[1:]:
        if set(s) != ids:
            raise VideoSetMismatch("score streams cover different videos")
    return {vid: float(np.clip(np.mean([s[vid] for s in streams]), BDI_MIN, BDI_MAX)) for vid in sorted(ids)}


def fuse_pre(blocks: Sequence[tuple]) -> WindowedFeatures:
    """Column-wise concatenation of aligned feature files.

    ``blocks`` holds ``(block_id, WindowedFeatures)`` pairs for one video;
    columns are renamed ``<block_id>:<column>``.
    """
    if not blocks:
        raise KeyMismatch("nothing to fuse")
    first_id, first = blocks[0]
    keys = first.keys()
    for bid, wf in blocks[1:]:
        if wf.keys() != keys:
            raise KeyMismatch(f"block {bid!r} windows do not match block {first_id!r}")
    ids = [bid for bid, _ in blocks]
    if len(set(ids)) != len(ids):
        raise KeyMismatch("block ids must be unique")
    columns = tuple(f"{bid}:{c}" for bid, wf in blocks for c in wf.columns)
    values = np.hstack([wf.values for _, wf in blocks])
    quality = np.logical_and.reduce([wf.quality for _, wf in blocks])
    combined = canonical_hash({"fused": [[bid, wf.registry_hash] for bid, wf in blocks]})
    version = "fused(" + ",".join(f"{bid}={wf.registry_version}" for bid, wf in blocks) + ")"
    return WindowedFeatures(
        video_id=first.video_id,
        columns=columns,
        registry_hash=combined,
        registry_version=version,
        window_index=first.window_index.copy(),
        t_start_s=first.t_start_s.copy(),
        quality=quality,
        values=values,
        meta={"fused_blocks": {bid: wf.registry_hash for bid, wf in blocks}},
    )
