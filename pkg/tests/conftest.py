"""Shared fixtures and reporting hooks for the test suite."""

import numpy as np
import pytest

from oodkit.centroids import generate_simplex

# Filled in by test_acceptance.py; printed once at the end of the run so the
# pass/fail line for each end-to-end criterion is visible in the summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance summary")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def simplex_4_4():
    return generate_simplex(4, 4)


def finite_difference(fn, array, h=1e-6):
    """Central-difference gradient of scalar fn with respect to array."""
    grad = np.zeros_like(array, dtype=np.float64)
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + h
        hi = fn()
        array[idx] = orig - h
        lo = fn()
        array[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * h)
        it.iternext()
    return grad


def max_relative_error(analytic, numeric):
    analytic = np.atleast_1d(np.asarray(analytic, dtype=np.float64))
    numeric = np.atleast_1d(np.asarray(numeric, dtype=np.float64))
    err = np.abs(analytic - numeric)
    err /= np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    # entries below the resolution of central differences at h = 1e-6 carry
    # only roundoff noise
    both_tiny = (np.abs(analytic) < 1e-6) & (np.abs(numeric) < 1e-6)
    err[both_tiny] = 0.0
    return float(np.max(err))
