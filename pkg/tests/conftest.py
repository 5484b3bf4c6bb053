import numpy as np
import pytest
from hypothesis import settings

from spoofguard.model import reference_model

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def model():
    return reference_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, scale=1.0):
    M = rng.normal(size=(n, n))
    return scale * (M @ M.T + n * np.eye(n)) / n


ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, passed: bool, detail: str) -> None:
    """Record one acceptance line; printed in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
