import numpy as np
import pytest

from mcflab import ambient, barrier
from mcflab.submanifold import curve_from_function

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cosh():
    return ambient.cosh_surface()


@pytest.fixture(scope="session")
def sphere():
    return ambient.round_sphere()


@pytest.fixture(scope="session")
def warped():
    return ambient.warped3d()


@pytest.fixture(scope="session")
def plane():
    return ambient.flat(2)


@pytest.fixture(scope="session")
def neck(cosh):
    return curve_from_function(cosh, lambda u: np.stack([np.zeros_like(u), u], -1), 64)


@pytest.fixture(scope="session")
def warped_neck(warped):
    return curve_from_function(warped, lambda u: np.stack([np.zeros_like(u), np.zeros_like(u), u], -1), 64)


@pytest.fixture(scope="session")
def equator(sphere):
    return curve_from_function(sphere, lambda u: np.stack([np.full_like(u, np.pi / 2), u], -1), 64)


@pytest.fixture(scope="session")
def neck_cert(neck):
    region = barrier.TubularRegion(neck, 0.5, barrier.radial_distance([0]))
    return barrier.certify_barrier(region, 1)


@pytest.fixture(scope="session")
def warped_cert(warped_neck):
    region = barrier.TubularRegion(warped_neck, 0.5, barrier.radial_distance([0, 1]))
    return barrier.certify_barrier(region, 1)


def latitude(chart, theta0, count=64):
    return curve_from_function(chart, lambda u: np.stack([np.full_like(u, theta0), u], -1), count)


def circle(chart, radius=1.0, count=64, centre=(0.0, 0.0)):
    return curve_from_function(
        chart, lambda u: np.stack([centre[0] + radius * np.cos(u), centre[1] + radius * np.sin(u)], -1), count)
