import json
from pathlib import Path

import numpy as np
import pytest
import torch

from vitalconv.approx import ApproxConfig
from vitalconv.refine import RefineConfig
from vitalconv.synth import build_synthetic

HERE = Path(__file__).parent

TINY_APX = ApproxConfig.desk(filters=4, embed=16, heads=2)
TINY_REF = RefineConfig.desk(hidden=16, layers=1, embed=64, token_dim=16, trunk_patch=32, head_hidden=16)


@pytest.fixture(scope="session")
def frozen():
    return json.loads((HERE / "frozen.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_ds():
    """12 patients x 2 segments; enough for every split to be non-empty."""
    return build_synthetic(12, 2, seed=3, min_patients=3)


@pytest.fixture(scope="session")
def clean_ds():
    """Noise-free cohort used for ground-truth checks."""
    return build_synthetic(64, 2, seed=5, min_patients=3)


@pytest.fixture(autouse=True)
def _torch_defaults():
    torch.set_default_dtype(torch.float32)
    yield


# criterion number -> (verdict, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {detail}")
