import pytest

import chainforge.harness as harness_mod
import chainforge.transfer as transfer_mod

from .helpers import ACCEPTANCE_LINES, OPEN_GUARD, TRACE_LOG, checked_hill_climb


@pytest.fixture(autouse=True)
def monitor_hill_climb(monkeypatch):
    """Every map search run by any test gets its traces checked."""
    monkeypatch.setattr(transfer_mod, "hill_climb_map", checked_hill_climb)
    monkeypatch.setattr(harness_mod, "hill_climb_map", checked_hill_climb)
    yield


@pytest.fixture
def open_guard():
    yield OPEN_GUARD
    OPEN_GUARD.disarm()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
        bad = sum(not (e["non_decreasing"] and e["accepted_increasing"]) for e in TRACE_LOG)
        terminalreporter.write_line(
            f"hill-climb traces checked over the whole session: {len(TRACE_LOG)}, violations: {bad}")
