"""Versioned registry of feature columns.

The registry document ships as ``registry_v<version>.json``; its hash is
embedded in feature files and model files so that mismatched artefacts are
rejected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .complexity import ENTROPY_NAMES, FRACTAL_NAMES, STATISTICAL_NAMES
from .errors import UnknownRegistryVersion

CURRENT_VERSION = "1"
SUPPORTED_VERSIONS = ("1",)

HRV_TIME_NAMES = (
    "hr_mean", "hr_min", "hr_max", "hr_std",
    "ibi_mean", "ibi_median", "ibi_min", "ibi_max", "ibi_range",
    "sdnn", "sdsd", "rmssd", "pnn20", "pnn50", "nn20", "nn50",
    "cvnn", "mad_nn", "iqr_nn", "mean_abs_sd", "ibi_trend_slope",
)
HRV_FREQ_NAMES = (
    "vlf_power", "lf_power", "hf_power", "total_power",
    "lf_norm", "hf_norm", "lf_hf_ratio", "vlf_rel", "lf_rel", "hf_rel",
    "lf_peak_hz", "hf_peak_hz", "ln_lf", "ln_hf",
)
POINCARE_NAMES = ("sd1", "sd2", "sd1_sd2_ratio", "ellipse_area", "csi", "cvi")
HRV_NONLINEAR_NAMES = POINCARE_NAMES + (
    "nn_sample_entropy", "nn_app_entropy", "nn_zero_crossing_rate", "nn_trend_resid_std",
)
PULSE_NAMES = ("spectral_hr", "breathing_rate", "pulse_snr_db", "mean_peak_amplitude")

HRV_GROUPS = (
    ("time", HRV_TIME_NAMES),
    ("frequency", HRV_FREQ_NAMES),
    ("nonlinear", HRV_NONLINEAR_NAMES),
    ("pulse", PULSE_NAMES),
)
SIGNAL_GROUPS = (
    ("statistical", STATISTICAL_NAMES),
    ("fractal", FRACTAL_NAMES),
    ("entropy", ENTROPY_NAMES),
)
FALLBACKS = {"katz_fd": 1.0, "katz_fd_sub2s": 1.0}


def build_registry_document(version: str = CURRENT_VERSION) -> dict:
    slots = []
    for group, names in SIGNAL_GROUPS + HRV_GROUPS:
        for name in names:
            slots.append({"name": name, "group": group, "fallback": FALLBACKS.get(name, 0.0)})
    return {
        "version": version,
        "description": "per-window rPPG feature columns in export order",
        "fallback_rule": "slots whose inputs are degenerate or unavailable take 'fallback' and mark the row block quality=false",
        "slots": slots,
    }


def canonical_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Registry:
    version: str
    columns: tuple
    groups: tuple
    fallbacks: tuple
    hash: str

    @property
    def hrv_slots(self) -> tuple:
        hrv_groups = {g for g, _ in HRV_GROUPS}
        return tuple(c for c, g in zip(self.columns, self.groups) if g in hrv_groups)

    def __len__(self):
        return len(self.columns)


@lru_cache(maxsize=None)
def load_registry(version: str = CURRENT_VERSION) -> Registry:
    if version not in SUPPORTED_VERSIONS:
        raise UnknownRegistryVersion(f"registry version {version!r} not supported")
    text = resources.files(__package__).joinpath(f"registry_v{version}.json").read_text(encoding="utf-8")
    doc = json.loads(text)
    slots = doc["slots"]
    return Registry(
        version=doc["version"],
        columns=tuple(s["name"] for s in slots),
        groups=tuple(s["group"] for s in slots),
        fallbacks=tuple(float(s["fallback"]) for s in slots),
        hash=canonical_hash(doc),
    )
