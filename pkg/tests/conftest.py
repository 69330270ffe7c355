import numpy as np
import pytest

from triga.problems import LeastSquares, LogisticRegression, QuadraticCoupling

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_logistic(seed=3, m=40, n=5):
    r = np.random.default_rng(seed)
    a = r.standard_normal((m, n))
    y = np.where(r.standard_normal(m) + a @ r.standard_normal(n) > 0, 1.0, -1.0)
    return LogisticRegression(a, y)


def make_least_squares(seed=5, m=12, n=8):
    r = np.random.default_rng(seed)
    return LeastSquares(r.standard_normal((m, n)), r.standard_normal(m))


@pytest.fixture(params=["quadratic", "least_squares", "logistic"])
def any_problem(request):
    return {
        "quadratic": lambda: QuadraticCoupling(4),
        "least_squares": make_least_squares,
        "logistic": make_logistic,
    }[request.param]()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
