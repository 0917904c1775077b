"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, EmptyTrainingSet, RegistryMismatch, UsageError
from .ingest import CohortManifest, atomic_write_text, load_manifest, load_trace
from .persistence import load_model, save_model
from .pipeline import (
    BDI_MAX,
    BDI_MIN,
    SWEEP_WINDOWS_S,
    PipelineConfig,
    WindowSpec,
    extract_features,
    read_feature_file,
    video_score,
    write_feature_file,
)
from .regression import ForestConfig, MlpConfig, evaluate, fuse_post, fuse_pre, predict, train_mlp, train_rf
from .regression.evaluation import per_video_csv, per_window_csv, read_predictions, write_predictions
from .synth import CohortSpec, ScoreMap, SynthConfig, synth_cohort, write_cohort

log = logging.getLogger("rppg_depression")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
CONFIG_SECTIONS = ("synth", "cohort", "score_map", "window", "pipeline", "rf", "mlp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def file_digest(path) -> dict:
    path = Path(path)
    return {"name": path.name, "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}


def _json_dump(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict) or set(cfg) - set(CONFIG_SECTIONS):
        raise UsageError(f"config must be an object with sections from {list(CONFIG_SECTIONS)}")
    return cfg


def _dataclass_from(cls, overrides: dict, **extra):
    names = {f.name for f in fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise UsageError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {**overrides, **extra}
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {cls.__name__}: {exc}") from None


def _parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _pipeline_config(cfg: dict) -> PipelineConfig:
    try:
        return PipelineConfig.from_dict(cfg.get("pipeline", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid pipeline config: {exc}") from None


# synth

def cmd_synth(args, cfg: dict) -> int:
    if args.n_subjects < 2:
        raise UsageError("--n-subjects must be >= 2")
    overrides = {**cfg.get("synth", {}), **_parse_overrides(args.set)}
    known = {f.name for f in fields(SynthConfig)} - {"seed"}
    if set(overrides) - known:
        raise UsageError(f"unknown SynthConfig overrides: {sorted(set(overrides) - known)}")
    for k, v in overrides.items():
        if isinstance(v, list):
            overrides[k] = tuple(v)
    spec = _dataclass_from(CohortSpec, cfg.get("cohort", {}))
    score_map = _dataclass_from(ScoreMap, cfg.get("score_map", {}))
    cohort = synth_cohort(args.n_subjects, args.seed, score_map, spec, overrides or None)
    manifest = write_cohort(cohort, args.out)
    log.info("wrote %d subjects to %s", len(cohort.records), manifest)
    return EXIT_OK


# features

def _features_job(job):
    trace_path, fps, video_id, out_path, window, pipeline_d, extra = job
    trace = load_trace(trace_path, fps)
    wf = extract_features(trace, window, PipelineConfig.from_dict(pipeline_d), video_id)
    write_feature_file(wf, out_path, extra)
    return video_id, len(wf), int(wf.quality.sum())


def _run_feature_job(job):
    try:
        return _features_job(job), None
    except DataError as exc:
        return None, f"{job[2]}: {type(exc).__name__}: {exc}"


def cmd_features(args, cfg: dict) -> int:
    manifest = load_manifest(args.manifest)
    window_s = args.window if args.window is not None else cfg.get("window", {}).get("window_s", 6.0)
    stride = args.stride_frames if args.stride_frames is not None else cfg.get("window", {}).get("stride_frames")
    if window_s not in SWEEP_WINDOWS_S:
        warnings.warn(f"window {window_s} s is outside the sweep set {list(SWEEP_WINDOWS_S)}", stacklevel=1)
        log.warning("window %s s is outside the sweep set %s", window_s, list(SWEEP_WINDOWS_S))
    try:
        window = WindowSpec(float(window_s), stride)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    pipeline = _pipeline_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"seed": args.seed, "manifest": file_digest(args.manifest)}
    records = [r for r in manifest if args.split == "all" or r.split == args.split]
    jobs = [(str(manifest.trace_file(r)), r.fps, r.video_id, str(out / f"{r.video_id}.csv"), window,
             pipeline.to_dict(), extra) for r in records]
    if args.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_run_feature_job, jobs))
    else:
        results = [_run_feature_job(j) for j in jobs]
    failures = [err for _, err in results if err]
    for ok, _ in results:
        if ok:
            log.info("%s: %d windows, %d usable", *ok)
    for err in failures:
        print(f"error: {err}", file=sys.stderr)
    return EXIT_DATA if failures else EXIT_OK


# train / predict / evaluate helpers

def _load_video_features(features_dir, records) -> dict:
    out = {}
    for r in records:
        path = Path(features_dir) / f"{r.video_id}.csv"
        if not path.is_file():
            raise DataError(f"missing feature file {path}")
        out[r.video_id] = read_feature_file(path)
    hashes = {wf.registry_hash for wf in out.values()}
    if len(hashes) > 1:
        raise RegistryMismatch(f"feature files use several registries: {sorted(hashes)}")
    return out


def _labeled(manifest: CohortManifest, split: str) -> list:
    return [r for r in manifest.by_split(split) if r.bdi_score is not None]


def _stack(records, feats: dict):
    xs, ys, total = [], [], 0
    for r in records:
        wf = feats[r.video_id]
        total += len(wf)
        xs.append(wf.values[wf.quality])
        ys.append(np.full(int(wf.quality.sum()), float(r.bdi_score)))
    n_cols = next(iter(feats.values())).values.shape[1] if feats else 0
    X = np.vstack(xs) if xs else np.empty((0, n_cols))
    y = np.concatenate(ys) if ys else np.empty(0)
    return X, y, total


def cmd_train(args, cfg: dict) -> int:
    manifest = load_manifest(args.manifest)
    records = _labeled(manifest, "train")
    if not records:
        raise EmptyTrainingSet(f"{args.manifest} has no labeled train rows")
    feats = _load_video_features(args.features, records)
    X, y, total = _stack(records, feats)
    if len(y) < 2:
        raise EmptyTrainingSet(f"only {len(y)} usable train windows")
    reg_hash = next(iter(feats.values())).registry_hash
    columns = list(next(iter(feats.values())).columns)
    dev_used = False
    if args.model == "rf":
        rf_cfg = _dataclass_from(ForestConfig, cfg.get("rf", {}), seed=args.seed)
        model = train_rf(X, y, rf_cfg, reg_hash, threads=args.threads)
    else:
        mlp_cfg = _dataclass_from(MlpConfig, cfg.get("mlp", {}), seed=args.seed)
        X_val = y_val = None
        if args.dev_manifest:
            dev_manifest = load_manifest(args.dev_manifest)
            dev_records = _labeled(dev_manifest, "dev")
            dev_feats = _load_video_features(args.dev_features or args.features, dev_records)
            if dev_feats and next(iter(dev_feats.values())).registry_hash != reg_hash:
                raise RegistryMismatch("dev features use a different registry than train features")
            X_val, y_val, _ = _stack(dev_records, dev_feats)
            dev_used = len(y_val) > 0
        model = train_mlp(X, y, mlp_cfg, reg_hash, X_val, y_val)
    label_mean = float(np.mean([r.bdi_score for r in records]))
    model.meta.update({
        "train_manifest": file_digest(args.manifest),
        "dev_manifest": file_digest(args.dev_manifest) if args.dev_manifest else None,
        "train_label_mean": label_mean,
        "columns": columns,
        "tool": f"rppg_depression {__version__}",
    })
    save_model(model, args.out)
    report = {
        "tool": f"rppg_depression {__version__}",
        "seed": args.seed,
        "model_type": args.model,
        "registry_hash": reg_hash,
        "config": model.config,
        "train_manifest": model.meta["train_manifest"],
        "dev_manifest": model.meta["dev_manifest"],
        "early_stopping_on_dev": dev_used,
        "n_videos": len(records),
        "n_rows_total": total,
        "n_rows_used": int(len(y)),
        "n_rows_dropped_low_quality": int(total - len(y)),
        "train_label_mean": label_mean,
        "loss_trace": model.meta.get("loss_trace", []),
    }
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".train.json")
    atomic_write_text(report_path, _json_dump(report))
    log.info("trained %s on %d rows (%d dropped)", args.model, len(y), total - len(y))
    return EXIT_OK


def _video_predictions(model, feats: dict) -> tuple:
    """Per-video scores from quality windows, plus per-window rows.

    Videos without any quality window fall back to the training label mean.
    """
    scores, rows, fallbacks = {}, [], []
    for vid in sorted(feats):
        wf = feats[vid]
        if list(wf.columns) != list(model.meta.get("columns", wf.columns)):
            raise RegistryMismatch(f"{vid}: feature columns differ from the model's")
        preds = predict(model, wf.values, wf.registry_hash) if len(wf) else np.empty(0)
        good = preds[wf.quality]
        if good.size:
            scores[vid] = video_score(good)
        else:
            fallbacks.append(vid)
            scores[vid] = float(np.clip(model.meta.get("train_label_mean", 0.0), BDI_MIN, BDI_MAX))
        rows.extend(zip([vid] * len(wf), wf.window_index, wf.t_start_s, wf.quality, preds))
    return scores, rows, fallbacks


def _split_records(manifest, split):
    return list(manifest) if split == "all" else manifest.by_split(split)


def cmd_predict(args, cfg: dict) -> int:
    model = load_model(args.model)
    manifest = load_manifest(args.manifest)
    feats = _load_video_features(args.features, _split_records(manifest, args.split))
    scores, rows, fallbacks = _video_predictions(model, feats)
    write_predictions(scores, args.out)
    if args.per_window:
        atomic_write_text(args.per_window, per_window_csv(rows))
    if fallbacks:
        log.warning("%d videos had no usable windows and got the training mean", len(fallbacks))
    return EXIT_OK


def cmd_evaluate(args, cfg: dict) -> int:
    if not args.model and not args.fuse_scores:
        raise UsageError("evaluate needs --model, --fuse-scores, or both")
    manifest = load_manifest(args.manifest)
    records = [r for r in _split_records(manifest, args.split) if r.bdi_score is not None]
    truth = {r.video_id: float(r.bdi_score) for r in records}
    streams, rows, fallbacks, meta = [], None, [], {}
    if args.model:
        model = load_model(args.model)
        feats = _load_video_features(args.features, records) if args.features else None
        if feats is None:
            raise UsageError("--model requires --features")
        scores, rows, fallbacks = _video_predictions(model, feats)
        streams.append(scores)
        meta.update({
            "model": file_digest(args.model),
            "model_type": model.model_type,
            "registry_hash": model.registry_hash,
            "model_config": model.config,
            "train_manifest": model.meta.get("train_manifest"),
            "seed": model.config.get("seed"),
        })
    fuse_files = [p for p in (args.fuse_scores or "").split(",") if p]
    streams.extend(read_predictions(p) for p in fuse_files)
    preds = streams[0] if len(streams) == 1 else fuse_post(streams)
    report = evaluate(preds, truth)
    meta.update({
        "tool": f"rppg_depression {__version__}",
        "test_manifest": file_digest(args.manifest),
        "split": args.split,
        "fused_streams": [file_digest(p) for p in fuse_files],
        "fallback_videos": fallbacks,
    })
    report.meta = meta
    doc = report.to_dict()
    doc["per_video"] = [{"video_id": v, "truth": t, "prediction": p, "abs_error": e}
                        for v, t, p, e in report.per_video]
    atomic_write_text(args.report, _json_dump(doc))
    if args.per_video:
        atomic_write_text(args.per_video, per_video_csv(report))
    if args.per_window and rows is not None:
        atomic_write_text(args.per_window, per_window_csv(rows))
    print(f"MAE {report.mae:.4f}  RMSE {report.rmse:.4f}  ({len(report.per_video)} videos)")
    return EXIT_OK


def cmd_fuse(args, cfg: dict) -> int:
    """Pre-fusion of per-video feature files from several directories."""
    blocks = []
    for spec in args.block:
        bid, sep, d = spec.partition("=")
        if not sep or not bid:
            raise UsageError(f"--block expects id=dir, got {spec!r}")
        blocks.append((bid, Path(d)))
    videos = sorted(p.stem for p in blocks[0][1].glob("*.csv"))
    if not videos:
        raise DataError(f"no feature files in {blocks[0][1]}")
    for vid in videos:
        parts = []
        for bid, d in blocks:
            path = d / f"{vid}.csv"
            if not path.is_file():
                raise DataError(f"block {bid!r} has no features for {vid}")
            parts.append((bid, read_feature_file(path)))
        write_feature_file(fuse_pre(parts), Path(args.out) / f"{vid}.csv", {"seed": args.seed})
    return EXIT_OK


def _globals_parser(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="global seed (default 0)")
    p.add_argument("--threads", type=int, default=d(1), help="worker count (default 1)")
    p.add_argument("--config", default=d(None), help="JSON file overriding defaults")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rppg-depression", description=__doc__.splitlines()[0],
                     parents=[_globals_parser(False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    common = [_globals_parser(True)]

    p = sub.add_parser("synth", parents=common, help="write a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--n-subjects", type=int, required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="SynthConfig override applied to every subject (repeatable)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", parents=common, help="extract windowed features per video")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--window", type=float, default=None, help="window length in seconds (default 6)")
    p.add_argument("--stride-frames", type=int, default=None)
    p.add_argument("--split", default="all", choices=("all", "train", "dev", "test"))
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=common, help="train a regressor on train-split windows")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="feature directory")
    p.add_argument("--model", choices=("rf", "mlp"), required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--report", default=None, help="training report JSON (default <out>.train.json)")
    p.add_argument("--dev-manifest", default=None, help="dev split for MLP early stopping")
    p.add_argument("--dev-features", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=common, help="write per-video predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", default="test", choices=("all", "train", "dev", "test"))
    p.add_argument("--out", required=True, help="prediction CSV")
    p.add_argument("--per-window", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=common, help="score predictions against labels")
    p.add_argument("--model", default=None)
    p.add_argument("--manifest", required=True, help="labeled test manifest")
    p.add_argument("--features", default=None)
    p.add_argument("--split", default="test", choices=("all", "train", "dev", "test"))
    p.add_argument("--report", required=True)
    p.add_argument("--per-video", default=None)
    p.add_argument("--per-window", default=None)
    p.add_argument("--fuse-scores", default=None, help="comma-separated prediction CSVs to average in")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fuse", parents=common, help="concatenate aligned feature files")
    p.add_argument("--block", action="append", required=True, metavar="ID=DIR")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args, load_config(args.config))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
