import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (passed, description, detail)
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def record():
    """Record one acceptance verdict; printed again in the terminal summary."""

    def _record(number, passed, description, detail=""):
        ACCEPTANCE_RESULTS[number] = (bool(passed), description, detail)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {description} {detail}".rstrip())

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, description, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(
            f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {description} {detail}".rstrip())


def random_labels(rng, n, n_labels, p=0.35):
    y = (rng.random((n, n_labels)) < p).astype(float)
    empty = y.sum(axis=1) == 0
    y[np.flatnonzero(empty), rng.integers(0, n_labels, empty.sum())] = 1
    return y


def mono_labels(rng, n, n_labels):
    y = np.zeros((n, n_labels))
    y[np.arange(n), rng.integers(0, n_labels, n)] = 1
    return y


def unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
