import math

import numpy as np
import pytest

from cbsprune.fisher import DenseHessian, EmpiricalFisher


def random_fisher(rng, n, k=20):
    return EmpiricalFisher(rng.standard_normal((k, n)))


def random_spd(rng, n, shift=0.1):
    a = rng.standard_normal((n, n))
    return a.T @ a / n + shift * np.eye(n)


@pytest.fixture
def toy2x2():
    """H = [[2, 1], [1, 3]], w = (1, 2)."""
    return DenseHessian([[2.0, 1.0], [1.0, 3.0]]), np.array([1.0, 2.0])


def half(n):
    return math.ceil(n / 2)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
