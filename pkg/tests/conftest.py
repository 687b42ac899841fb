import numpy as np
import pytest

from deepsl.fieldline import CoefficientTrace

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def unit_trace():
    return CoefficientTrace.from_values(0.0, 1.0, np.ones(2001), 0.0, 1.0, d=10)


@pytest.fixture
def criterion():
    """Callable recording one PASS/FAIL line per acceptance criterion."""
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
