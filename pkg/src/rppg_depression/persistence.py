"""Model files: a JSON header plus base64-encoded little-endian arrays.

Tree forests are stored as flat node arrays (feature index, threshold,
children, leaf value) with per-tree offsets; MLPs as row-major float64
weight matrices with their shapes.
"""
from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CorruptModelFile, UnsupportedFormatVersion
from .ingest import atomic_write_text
from .regression.model import TrainedModel

FORMAT_VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8"}


def _encode(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    kind = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
    data = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes(order="C")
    return {"dtype": kind, "shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"], validate=True)
    arr = np.frombuffer(raw, dtype=_DTYPES[d["dtype"]]).copy()
    return arr.reshape(d["shape"])


def _checksum(arrays: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(arrays[name]["data"].encode())
    return h.hexdigest()


def model_text(model: TrainedModel) -> str:
    arrays = {k: _encode(v) for k, v in model.params.items()}
    doc = {
        "format_version": FORMAT_VERSION,
        "tool": f"rppg_depression {__version__}",
        "model_type": model.model_type,
        "registry_hash": model.registry_hash,
        "n_features": model.n_features,
        "seed": model.config.get("seed"),
        "config": model.config,
        "meta": model.meta,
        "arrays": arrays,
        "checksum": _checksum(arrays),
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_model(model: TrainedModel, path) -> None:
    atomic_write_text(path, model_text(model))


def load_model(path) -> TrainedModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelFile(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CorruptModelFile(f"{path}: missing header")
    if doc["format_version"] != FORMAT_VERSION:
        raise UnsupportedFormatVersion(f"{path}: format_version {doc['format_version']} (supported: {FORMAT_VERSION})")
    try:
        arrays = doc["arrays"]
        if _checksum(arrays) != doc["checksum"]:
            raise CorruptModelFile(f"{path}: checksum mismatch")
        params = {k: _decode(v) for k, v in arrays.items()}
        return TrainedModel(doc["model_type"], doc["config"], doc["registry_hash"], int(doc["n_features"]),
                            params, doc.get("meta", {}))
    except CorruptModelFile:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelFile(f"{path}: {exc}") from None
