from __future__ import annotations

import numpy as np
import pytest

from crnsim.config import ScenarioConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    """A short, cheap scenario for end-to-end checks."""
    return ScenarioConfig(steps=120, replications=2, seed=77)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_report(request):
    """Record one pass/fail line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def report(number: int, ok: bool, detail: str) -> None:
        lines[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
