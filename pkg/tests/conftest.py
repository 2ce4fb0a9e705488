import numpy as np
import pytest

from reminet.dataset import generate_synthetic

_ACCEPTANCE = []


@pytest.fixture
def tiny_dataset():
    return generate_synthetic(6, 5, 2, 3, seed=1, drift_scale=0.05, noise_scale=0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance_record():
    """Collects one line per acceptance criterion for the terminal summary."""

    def record(number, passed, detail):
        _ACCEPTANCE.append((number, passed, detail))
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}")
