import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlsobs.spectral import ObservationWindow, SpectralField, TorusGeometry

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_coeffs(geom, rng, decay=0.0):
    k = np.sqrt(geom.eigenvalues)
    return (rng.standard_normal(geom.shape) + 1j * rng.standard_normal(geom.shape)) * np.exp(-decay * k)


def random_field(geom, rng, decay=0.0, norm=None, s=0.0):
    u = SpectralField(geom, random_coeffs(geom, rng, decay))
    return u if norm is None else u * (norm / u.norm(s))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def line64():
    return TorusGeometry.line(64)


@pytest.fixture(scope="session")
def line32():
    return TorusGeometry.line(32)


@pytest.fixture(scope="session")
def interval64(line64):
    return ObservationWindow.interval(line64, math.pi - 0.5, 1.0)


@pytest.fixture(scope="session")
def interval32(line32):
    return ObservationWindow.interval(line32, math.pi - 0.5, 1.0)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
