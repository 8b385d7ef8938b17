from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Record one pass/fail line for an acceptance criterion and echo it immediately."""

    def _report(n: int, passed: bool, detail: str) -> None:
        line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
