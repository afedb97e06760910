import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rtdisc.geometry import Annulus, Background, Circle, ConvexDomain, Piece, Polygon
from rtdisc.media import Coefficients, PhaseFunction, Scene, load_scene
from rtdisc.cli import bundled_scene

settings.register_profile(
    "ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

HG09 = PhaseFunction("henyey-greenstein", 0.9, 2)


@pytest.fixture(scope="session")
def phantom_slice():
    return load_scene(bundled_scene("phantom_slice.json"))


@pytest.fixture(scope="session")
def phantom_ball():
    return load_scene(bundled_scene("phantom_ball.json"))


def circles_scene(radius=1.0, phase=HG09):
    """Two round inclusions in a scattering background."""
    pieces = (
        Piece(1, Annulus((0.35, 0.05), 0.12, 0.3)),
        Piece(2, Circle((-0.4, 0.3), 0.22)),
        Piece(3, Background()),
    )
    return Scene(ConvexDomain("unit-disk", radius), pieces,
                 Coefficients((0.3, 0.2, 0.1), (0.3, 0.3, 0.3)), phase)


def square_scene(radius=1.0, phase=HG09):
    """The circles scene with the disk inclusion replaced by an axis-aligned square."""
    half = 0.5 * math.sqrt(math.pi) * 0.22
    c = (-0.4, 0.3)
    sq = tuple((c[0] + sx * half, c[1] + sy * half) for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1)))
    pieces = (
        Piece(1, Annulus((0.35, 0.05), 0.12, 0.3)),
        Piece(2, Polygon(sq)),
        Piece(3, Background()),
    )
    return Scene(ConvexDomain("unit-disk", radius), pieces,
                 Coefficients((0.3, 0.2, 0.1), (0.3, 0.3, 0.3)), phase)


def chords_from(point, lengths, radius):
    """Outgoing detectors whose backward chord ends at ``point`` on the circle."""
    p = np.asarray(point, dtype=float)
    L = np.asarray(lengths, dtype=float)
    base = math.atan2(-p[1], -p[0])
    ang = base + np.arccos(np.clip(L / (2 * radius), -1, 1))
    xi = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    x = p + L[:, None] * xi
    x *= radius / np.linalg.norm(x, axis=1, keepdims=True)
    return x, xi


# -- acceptance report --------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> bool:
    """Record one acceptance line; printed now and in the terminal summary."""
    line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# -- full-size sinograms shared by several modules ------------------------------


@pytest.fixture(scope="session")
def phantom_jump_sinogram(phantom_ball):
    from rtdisc.tomography import sinogram_from_jumps, slice_reduce

    return sinogram_from_jumps(slice_reduce(phantom_ball, 0.5), 360, 256)


@pytest.fixture(scope="session")
def square_jump_sinogram():
    from rtdisc.tomography import sinogram_from_jumps

    return sinogram_from_jumps(square_scene(), 360, 256)


@pytest.fixture(scope="session")
def circles_jump_sinogram():
    from rtdisc.tomography import sinogram_from_jumps

    return sinogram_from_jumps(circles_scene(), 360, 256)
