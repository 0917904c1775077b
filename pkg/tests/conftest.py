import json
from pathlib import Path

import pytest

from rppg_depression.cli import main


def cli(*args):
    return main([str(a) for a in args])


def write_json(path, doc):
    path = Path(path)
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    """Six 12 s subjects with features and a small forest."""
    root = tmp_path_factory.mktemp("small")
    config = write_json(root / "config.json", {"cohort": {"duration_s": 12}, "rf": {"n_estimators": 25}})
    assert cli("synth", "--seed", 4, "--config", config, "--n-subjects", 6, "--out", root / "co") == 0
    assert cli("features", "--seed", 4, "--manifest", root / "co" / "manifest.csv", "--out", root / "f") == 0
    assert cli("train", "--seed", 4, "--config", config, "--manifest", root / "co" / "manifest.csv",
               "--features", root / "f", "--model", "rf", "--out", root / "rf.json") == 0
    return root
