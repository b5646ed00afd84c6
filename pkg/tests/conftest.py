import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from torusflow.fields import TrigScalar, build_constant, build_stepanoff, build_stream_field, build_trig

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default",
    max_examples=30,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
    derandomize=True,
)
settings.load_profile("default")

ZETA_IRR = np.array([1.0, np.sqrt(2.0)]) / np.sqrt(3.0)


def trig(dim, const, terms):
    return TrigScalar(dim, const, terms)


@pytest.fixture(scope="session")
def a_product():
    # (2 + sin 2 pi x1)(2 + cos 2 pi x2)
    return trig(2, 2.0, [((1, 0), 0.0, 1.0)]) * trig(2, 2.0, [((0, 1), 1.0, 0.0)])


@pytest.fixture(scope="session")
def a_diag():
    return trig(2, 2.0, [((1, 1), 0.0, 1.0)])


@pytest.fixture(scope="session")
def a_sign():
    return trig(2, 0.0, [((1, 0), 1.0, 0.0), ((0, 1), 1.0, 0.0)])


@pytest.fixture(scope="session")
def sin2_base():
    # sin^2 pi x1 + sin^2 pi x2 = 1 - cos(2 pi x1)/2 - cos(2 pi x2)/2
    return trig(2, 1.0, [((1, 0), -0.5, 0.0), ((0, 1), -0.5, 0.0)])


@pytest.fixture(scope="session")
def stepanoff_diag(a_diag):
    return build_stepanoff(a_diag, ZETA_IRR)


@pytest.fixture(scope="session")
def stream_field():
    sigma = trig(2, 2.0, [((0, 1), 1.0, 0.0)])
    u_per = trig(2, 0.0, [((1, 1), 0.0, 1.0 / (2 * np.pi))])
    return build_stream_field(sigma, [1, 0], u_per, rho_reciprocal=True)


@pytest.fixture(scope="session")
def trig_field():
    c1 = trig(2, 0.3, [((1, 0), 0.0, 1.0), ((1, 1), 0.5, 0.0)])
    c2 = trig(2, -0.2, [((0, 1), 0.7, 0.0), ((2, -1), 0.0, 0.3)])
    return build_trig([c1, c2])


@pytest.fixture(scope="session")
def constant_field():
    return build_constant([0.3, -0.7])


@pytest.fixture(scope="session")
def thetas():
    return {
        "one": trig(1, 1.0, []),
        "sin": trig(1, 2.0, [((1,), 0.0, 1.0)]),
        "cos": trig(1, 2.0, [((1,), 1.0, 0.0)]),
        "sin2": trig(1, 3.0, [((2,), 0.0, 1.0)]),
        "mix": trig(1, 3.0, [((1,), 0.5, 0.0), ((3,), 0.0, 0.7)]),
    }


# one summary line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
