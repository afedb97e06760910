import math

import numpy as np
import pytest
import shapely.geometry as sg
from hypothesis import given, strategies as st

from rtdisc.geometry import (
    Annulus,
    Background,
    Circle,
    ConvexDomain,
    DomainError,
    Piece,
    Polygon,
    audit_convexity,
    boundary_projection,
    chord_exit_times,
    locate,
    piece_crossings,
    points_in_polygon,
)
from rtdisc.media import Coefficients, Scene

from conftest import circles_scene, square_scene

DISK = ConvexDomain("unit-disk", 1.0)

angles = st.floats(0, 2 * math.pi, allow_nan=False)
unit_r = st.floats(0, 0.999, allow_nan=False)


def interior_point(r, a, radius=1.0):
    return np.array([radius * r * math.cos(a), radius * r * math.sin(a)])


def unit(a):
    return np.array([math.cos(a), math.sin(a)])


@given(unit_r, angles, angles)
def test_exit_times_sum_to_chord(r, a, t):
    x, xi = interior_point(r, a), unit(t)
    tm, tp = chord_exit_times(DISK, x, xi)
    # closed-form chord through x along xi
    d = abs(x[0] * xi[1] - x[1] * xi[0])
    assert tm + tp == pytest.approx(2 * math.sqrt(1 - d * d), abs=1e-10)
    assert np.linalg.norm(x - tm * xi) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(x + tp * xi) == pytest.approx(1.0, abs=1e-12)


@given(unit_r, angles, angles, st.floats(-1, 1))
def test_projection_constant_along_characteristic(r, a, t, frac):
    x, xi = interior_point(r, a), unit(t)
    tm, tp = chord_exit_times(DISK, x, xi)
    s = frac * (tp if frac > 0 else tm) * 0.999
    p0 = boundary_projection(DISK, x, xi)
    p1 = boundary_projection(DISK, x + s * xi, xi)
    assert np.allclose(p0, p1, atol=1e-10)


def test_exit_times_reject_bad_input():
    with pytest.raises(DomainError):
        chord_exit_times(DISK, (1.5, 0.0), (1.0, 0.0))
    with pytest.raises(DomainError):
        chord_exit_times(DISK, (0.0, 0.0), (1.0, 1.0))


def test_domain_validation():
    with pytest.raises(ValueError):
        ConvexDomain("square", 1.0)
    with pytest.raises(ValueError):
        ConvexDomain("unit-disk", -1.0)


@given(unit_r, angles, angles)
def test_crossings_ordered_within_chord(r, a, t):
    scene = square_scene()
    x, xi = interior_point(r, a), unit(t)
    tm, _ = chord_exit_times(scene.domain, x, xi)
    ts = [c.t for c in piece_crossings(scene, x, xi)]
    assert all(b > a_ for a_, b in zip(ts, ts[1:]))
    assert all(0 <= v <= tm for v in ts)


def test_crossings_through_circle_centre():
    scene = Scene(DISK, (Piece(1, Circle((0.0, 0.0), 0.5)), Piece(2, Background())),
                  Coefficients((1.0, 0.1), (0.0, 0.0)))
    cr = piece_crossings(scene, (0.0, 0.0), (1.0, 0.0))
    # backward ray from the centre leaves the circle once at t = 0.5
    assert len(cr) == 1
    assert cr[0].t == pytest.approx(0.5)
    assert (cr[0].before, cr[0].after) == (1, 2)


def test_tangent_contact_is_not_a_crossing():
    scene = Scene(DISK, (Piece(1, Circle((0.0, 0.5), 0.25)), Piece(2, Background())),
                  Coefficients((1.0, 0.1), (0.0, 0.0)))
    cr = piece_crossings(scene, (0.5, 0.25), (1.0, 0.0))
    assert len(cr) == 1 and cr[0].tangent
    # the contact point sits on the circle's closure, which the circle claims
    assert cr[0].before == cr[0].after == 1


def test_first_declared_piece_wins_on_closure():
    pieces = (Piece(1, Circle((0.0, 0.0), 0.5)), Piece(2, Annulus((0.0, 0.0), 0.5, 0.8)),
              Piece(3, Background()))
    idx = locate(DISK, pieces, np.array([[0.5, 0.0], [0.6, 0.0], [0.9, 0.0], [1.1, 0.0]]))
    assert idx.tolist() == [0, 1, 2, -1]


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=30))
def test_points_in_polygon_matches_shapely(pts):
    verts = np.array([(-0.6, -0.3), (0.5, -0.5), (0.7, 0.4), (0.0, 0.1), (-0.4, 0.6)])
    poly = sg.Polygon(verts)
    p = np.array(pts)
    ours = points_in_polygon(p, verts)
    for q, v in zip(p, ours):
        # the even-odd rule is unspecified on the boundary itself
        if poly.exterior.distance(sg.Point(q)) > 1e-9:
            assert v == poly.contains(sg.Point(q))


def test_audit_circles_only_is_satisfied():
    audit = audit_convexity(circles_scene(), n_rays=300)
    assert audit.satisfied and audit.flat_segments == []
    assert audit.max_crossings <= 6


def test_audit_square_reports_flat_edges():
    audit = audit_convexity(square_scene(), n_rays=50)
    assert not audit.satisfied
    assert len(audit.flat_segments) == 4
    assert audit.directed_families == 8
    for seg in audit.flat_segments:
        d = seg.direction_plus
        assert min(abs(d[0]), abs(d[1])) < 1e-12


def test_polygon_edges_close():
    p = Polygon(((0, 0), (1, 0), (0, 1)))
    assert p.edges()[-1] == ((0, 1), (0, 0))
