import pytest

from gexp.gheat import VolatilityBand

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def band():
    return VolatilityBand(0.5, 1.0)


@pytest.fixture
def degenerate_band():
    return VolatilityBand(0.0, 1.0)


@pytest.fixture
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(criterion: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
