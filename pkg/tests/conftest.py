from pathlib import Path

import numpy as np
import pytest

from cfpmelody import cli
from cfpmelody.net import load_model

ACCEPTANCE_LINES = []

# training recipe for the end-to-end checks (see tests/test_acceptance.py)
TRAIN_CLIPS = 8
TRAIN_EPOCHS = 12


def record_criterion(number, name, passed, detail=""):
    """``passed`` is True, False, or None for a skipped optional criterion."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    ACCEPTANCE_LINES.append(f"[criterion {number:>2}] {status}  {name}"
                            + (f"  ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory) -> Path:
    """Eight randomised 10 s training clips plus manifest, written via the CLI."""
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--clips", str(TRAIN_CLIPS), "--seed", "0", "-o", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def trained_model_path(synth_dataset, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("train")
    code = cli.main(["train", str(synth_dataset / "manifest.tsv"), "--epochs", str(TRAIN_EPOCHS),
                     "--seed", "0", "-o", str(out), "--no-plot"])
    assert code == 0
    return out / "model.cnn"


@pytest.fixture(scope="session")
def trained_model(trained_model_path):
    return load_model(trained_model_path)
