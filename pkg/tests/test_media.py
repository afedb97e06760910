import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from rtdisc.geometry import Background, Circle, ConvexDomain, Piece, Polygon
from rtdisc.media import (
    BallScene,
    Coefficients,
    ConfigurationError,
    PhaseFunction,
    Scene,
    SceneError,
    load_scene,
    mu_lookup,
    phase_eval,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    uniform_disk,
)

from conftest import circles_scene, square_scene


def phase_integral(phase):
    if phase.dimension == 2:
        f = lambda t: phase_eval(phase, math.cos(t))
        return quad(f, -math.pi, math.pi, points=[0.0], epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    # axially symmetric: 2 pi int_0^pi p(cos t) sin t dt
    f = lambda t: 2 * math.pi * phase_eval(phase, math.cos(t)) * math.sin(t)
    return quad(f, 0, math.pi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


@pytest.mark.parametrize("dim", [2, 3])
@given(st.floats(-0.95, 0.95))
def test_phase_normalised(dim, g):
    p = PhaseFunction("henyey-greenstein", g, dim)
    assert abs(phase_integral(p) - 1) <= 1e-8


@given(st.floats(-0.99, 0.99), st.floats(-1, 1))
def test_phase_positive(g, c):
    assert phase_eval(PhaseFunction("henyey-greenstein", g, 2), c) > 0


def test_isotropic_values():
    assert phase_eval(PhaseFunction(), 0.3) == pytest.approx(1 / (2 * math.pi))
    assert phase_eval(PhaseFunction("isotropic", 0, 3), -0.3) == pytest.approx(1 / (4 * math.pi))


@pytest.mark.parametrize("g", [1.0, -1.0, 1.5])
def test_phase_rejects_g(g):
    with pytest.raises(ConfigurationError):
        PhaseFunction("henyey-greenstein", g, 2)


def test_coefficients_mu_t_is_sum():
    c = Coefficients((0.1, 0.2), (0.3, 0.0))
    assert c.mu_t == (0.1 + 0.3, 0.2 + 0.0)


def test_negative_coefficient_names_field():
    with pytest.raises(SceneError) as exc:
        Coefficients((0.1, -0.2), (0.0, 0.0))
    assert exc.value.field == "pieces[1].mu_a"


@given(st.floats(-0.15, 0.15), st.floats(-0.15, 0.15))
def test_lookup_piecewise_constant(dx, dy):
    scene = circles_scene()
    a = mu_lookup(scene, (-0.4, 0.3))
    b = mu_lookup(scene, (-0.4 + dx, 0.3 + dy))
    assert a == b == (0.2, 0.3, 0.2 + 0.3)


def test_lookup_outside_is_zero():
    assert mu_lookup(uniform_disk(0.5, 0.2), (2.0, 0.0)) == (0.0, 0.0, 0.0)


def test_overlap_rejected():
    with pytest.raises(SceneError) as exc:
        Scene(ConvexDomain(), (Piece(1, Circle((0, 0), 0.3)), Piece(2, Circle((0.2, 0), 0.3))),
              Coefficients((0.1, 0.1), (0, 0)))
    assert "overlaps" in str(exc.value)


def test_polygon_circle_overlap_rejected():
    sq = Polygon(((0, 0), (0.4, 0), (0.4, 0.4), (0, 0.4)))
    with pytest.raises(SceneError):
        Scene(ConvexDomain(), (Piece(1, Circle((0, 0), 0.2)), Piece(2, sq)), Coefficients((0.1, 0.1), (0, 0)))


def test_piece_outside_domain_rejected():
    with pytest.raises(SceneError):
        Scene(ConvexDomain(), (Piece(1, Circle((0.8, 0), 0.3)),), Coefficients((0.1,), (0,)))


@pytest.mark.parametrize("make", [circles_scene, square_scene])
def test_json_round_trip(tmp_path, make):
    scene = make()
    path = tmp_path / "scene.json"
    save_scene(scene, path)
    assert load_scene(path) == scene


def test_ball_file_round_trip(phantom_ball, tmp_path):
    assert isinstance(phantom_ball, BallScene)
    path = tmp_path / "ball.json"
    save_scene(phantom_ball, path)
    assert load_scene(path) == phantom_ball
    assert phantom_ball.coefficients.mu_t == pytest.approx((0.6, 0.5, 0.4))


def test_unknown_field_rejected():
    doc = scene_to_dict(uniform_disk(0.1, 0.1))
    doc["pieces"][0]["colour"] = "red"
    with pytest.raises(SceneError) as exc:
        scene_from_dict(doc)
    assert exc.value.field == "pieces[0]"


def test_bad_g_names_field():
    doc = scene_to_dict(uniform_disk(0.1, 0.1))
    doc["phase"] = {"kind": "henyey-greenstein", "g": 1.0, "dimension": 2}
    with pytest.raises(SceneError) as exc:
        scene_from_dict(doc)
    assert exc.value.field == "phase.g"


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"domain": {"kind": "unit-disk",\n  "radius": }')
    with pytest.raises(SceneError) as exc:
        load_scene(path)
    assert "line 2" in str(exc.value)


def test_three_d_phase_rejected_for_disk():
    with pytest.raises(SceneError):
        Scene(ConvexDomain(), (Piece(1, Background()),), Coefficients((0.1,), (0.1,)),
              PhaseFunction("isotropic", 0.0, 3))


def test_fields_vectorised(phantom_slice):
    pts = np.array([[0.43 + 0.25, 0.0], [-0.38, 0.38], [0.0, -0.6], [0.43, 0.0]])
    mu_a, mu_s, mu_t = phantom_slice.mu_fields(pts)
    assert mu_t == pytest.approx([0.6, 0.5, 0.4, 0.4])
    assert np.all(mu_t == mu_a + mu_s)
