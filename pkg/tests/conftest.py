"""Shared fixtures: CLI runner and session-scoped end-to-end artifacts.

The expensive synth -> train -> evaluate chain runs once per session and is
shared by the CLI tests and the end-to-end acceptance checks.  Wall-clock
times are captured inside the fixtures so budget assertions see the full
cost regardless of which test triggered the build.
"""

import json
import subprocess
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import pytest

# Frozen end-to-end recipe, calibrated once on the committed seed.
E2E_SEED = 7
E2E_CLIPS = 400
E2E_KEYWORDS = 3
E2E_EPOCHS = 12
PRETRAIN_SEED = 13
PRETRAIN_CLIPS = 200
PRETRAIN_EPOCHS = 10


def run_cli(*args, check=True):
    """Run the command-line tool in a subprocess; returns CompletedProcess."""
    result = subprocess.run(
        [sys.executable, "-m", "wordspot.cli", *[str(a) for a in args]],
        capture_output=True,
        text=True,
    )
    if check and result.returncode != 0:
        raise AssertionError(
            f"wordspot {' '.join(map(str, args))} failed "
            f"({result.returncode}):\n{result.stdout}\n{result.stderr}"
        )
    return result


@pytest.fixture(scope="session")
def cli():
    return run_cli


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 60-clip, 3-keyword synthetic corpus for cheap tests."""
    root = tmp_path_factory.mktemp("small") / "corpus"
    run_cli("synth", "--n-clips", 60, "--n-keywords", 3, "--seed", 7, "--out", root)
    return root


@pytest.fixture(scope="session")
def quick_model(tmp_path_factory, small_corpus):
    """A briefly trained checkpoint on the small corpus; for plumbing tests."""
    path = tmp_path_factory.mktemp("quick") / "model.pt"
    run_cli(
        "train", "--clips", small_corpus / "clips.json",
        "--lexicon", small_corpus / "lexicon.txt",
        "--out", path, "--epochs", 3, "--seed", 7,
    )
    return path


@pytest.fixture(scope="session")
def e2e(tmp_path_factory):
    """The full synthetic pipeline: corpus, trained detector, swept report."""
    root = tmp_path_factory.mktemp("e2e")
    corpus = root / "corpus"
    model = root / "model.pt"
    report_path = root / "report.json"
    walls = {}

    t0 = time.perf_counter()
    run_cli("synth", "--n-clips", E2E_CLIPS, "--n-keywords", E2E_KEYWORDS,
            "--seed", E2E_SEED, "--out", corpus)
    walls["synth"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    run_cli("train", "--clips", corpus / "clips.json", "--lexicon", corpus / "lexicon.txt",
            "--out", model, "--backbone", "tiny", "--epochs", E2E_EPOCHS,
            "--seed", E2E_SEED)
    walls["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    run_cli("evaluate", "--checkpoint", model, "--clips", corpus / "clips.json",
            "--sweep", "--out", report_path)
    walls["evaluate"] = time.perf_counter() - t0

    report = json.loads(report_path.read_text())
    return SimpleNamespace(
        root=root,
        corpus=corpus,
        model=model,
        report=report,
        theta=report["theta"],
        walls=walls,
    )
