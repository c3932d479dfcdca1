from __future__ import annotations

import pytest

from cvarrl import kernels


@pytest.fixture(params=kernels.AVAILABLE)
def backend(request):
    """Every kernel backend that imports on this machine."""
    return request.param


_VERDICTS: list[tuple[int, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; all lines are printed in the terminal summary."""

    def record(criterion: int, ok: bool, detail: str) -> bool:
        _VERDICTS.append((criterion, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in sorted(_VERDICTS):
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
