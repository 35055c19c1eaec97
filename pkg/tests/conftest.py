import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from prefsr.pipeline import ToyConfig, pretrain  # noqa: E402
from prefsr.trainer import DpoConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def flow_reference():
    """Pretrained velocity-head reference on the flow schedule (shared, read-only)."""
    return pretrain(ToyConfig(schedule="flow", dpo=DpoConfig(head="velocity")))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, if that module ran."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
