"""Piecewise-constant coefficients, phase functions and scene files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .geometry import (
    Annulus,
    Background,
    Circle,
    ConvexDomain,
    Piece,
    Polygon,
    locate,
)


class ConfigurationError(ValueError):
    pass


class SceneError(ValueError):
    """Scene file could not be parsed or violates an invariant.

    ``field`` names the offending entry, e.g. ``pieces[2].mu_a``.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


# -- phase functions ----------------------------------------------------------


@dataclass(frozen=True)
class PhaseFunction:
    kind: str = "isotropic"
    g: float = 0.0
    dimension: int = 2

    def __post_init__(self):
        if self.kind not in ("isotropic", "henyey-greenstein"):
            raise ConfigurationError(f"unknown phase kind {self.kind!r}")
        if self.dimension not in (2, 3):
            raise ConfigurationError(f"phase dimension must be 2 or 3, got {self.dimension}")
        if not abs(self.g) < 1:
            raise ConfigurationError(f"phase.g must satisfy |g| < 1, got {self.g}")
        if self.kind == "isotropic" and self.g != 0:
            raise ConfigurationError("isotropic phase requires g = 0")

    def __call__(self, cos_theta):
        return phase_eval(self, cos_theta)


def phase_eval(phase: PhaseFunction, cos_theta):
    """Phase density at scattering cosine ``cos_theta``.

    Normalised to one over the unit circle (dimension 2) or sphere
    (dimension 3).
    """
    c = np.asarray(cos_theta, dtype=float)
    g = phase.g
    if phase.dimension == 2:
        out = (1 - g * g) / (2 * np.pi * (1 + g * g - 2 * g * c))
    else:
        out = (1 - g * g) / (4 * np.pi * (1 + g * g - 2 * g * c) ** 1.5)
    return out if out.ndim else float(out)


# -- coefficients and scenes --------------------------------------------------


@dataclass(frozen=True)
class Coefficients:
    mu_a: tuple[float, ...] = ()
    mu_s: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.mu_a) != len(self.mu_s):
            raise SceneError("mu_a and mu_s lengths differ", "coefficients")
        for name in ("mu_a", "mu_s"):
            for i, v in enumerate(getattr(self, name)):
                if not (math.isfinite(v) and v >= 0):
                    raise SceneError(f"must be finite and >= 0, got {v}", f"pieces[{i}].{name}")

    @property
    def mu_t(self) -> tuple[float, ...]:
        return tuple(a + s for a, s in zip(self.mu_a, self.mu_s))


@dataclass(frozen=True)
class Scene:
    domain: ConvexDomain
    pieces: tuple[Piece, ...] = ()
    coefficients: Coefficients = field(default_factory=Coefficients)
    phase: PhaseFunction = field(default_factory=PhaseFunction)

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if len(self.pieces) != len(self.coefficients.mu_a):
            raise SceneError("every piece needs coefficients", "pieces")
        if self.phase.dimension != 2:
            raise SceneError("a 2D scene needs a dimension-2 phase function", "phase.dimension")
        _validate_partition(self.domain, self.pieces)

    @property
    def scatters(self) -> bool:
        return any(s > 0 for s in self.coefficients.mu_s)

    def locate(self, points) -> np.ndarray:
        return locate(self.domain, self.pieces, points)

    def mu_fields(self, points):
        """Vectorised ``(mu_a, mu_s, mu_t)`` at points; zero outside every piece."""
        idx = self.locate(points)
        mu_a = np.append(np.asarray(self.coefficients.mu_a, dtype=float), 0.0)[idx]
        mu_s = np.append(np.asarray(self.coefficients.mu_s, dtype=float), 0.0)[idx]
        return mu_a, mu_s, mu_a + mu_s

    def sup_mu_t(self) -> float:
        return max(self.coefficients.mu_t, default=0.0)


def mu_lookup(scene: Scene, x) -> tuple[float, float, float]:
    mu_a, mu_s, mu_t = scene.mu_fields(np.asarray(x, dtype=float)[None, :])
    return float(mu_a[0]), float(mu_s[0]), float(mu_t[0])


def _shape_polygon(shape, resolution=512):
    import shapely.geometry as sg

    if isinstance(shape, Circle):
        return sg.Point(shape.center).buffer(shape.r, quad_segs=resolution // 4)
    if isinstance(shape, Annulus):
        outer = sg.Point(shape.center).buffer(shape.r_out, quad_segs=resolution // 4)
        inner = sg.Point(shape.center).buffer(shape.r_in, quad_segs=resolution // 4)
        return outer.difference(inner)
    return sg.Polygon(shape.vertices)


def _round_pair_disjoint(a, b) -> bool | None:
    """Exact disjointness for circle/annulus pairs; None if undecided."""
    if not isinstance(a, (Circle, Annulus)) or not isinstance(b, (Circle, Annulus)):
        return None
    d = math.dist(a.center, b.center)
    if isinstance(a, Annulus) and isinstance(b, Circle):
        a, b = b, a
    if isinstance(a, Circle) and isinstance(b, Circle):
        return d >= a.r + b.r
    if isinstance(a, Circle):
        # disk inside the hole, or entirely outside the ring
        return d + a.r <= b.r_in or d >= a.r + b.r_out
    # two annuli: one sits inside the other's hole, or rings are apart
    return d + a.r_out <= b.r_in or d + b.r_out <= a.r_in or d >= a.r_out + b.r_out


def _validate_partition(domain: ConvexDomain, pieces: Sequence[Piece]) -> None:
    R = domain.radius
    seen_ids = set()
    n_background = 0
    for i, piece in enumerate(pieces):
        where = f"pieces[{i}]"
        if piece.id in seen_ids:
            raise SceneError(f"duplicate piece id {piece.id}", f"{where}.id")
        seen_ids.add(piece.id)
        s = piece.shape
        if isinstance(s, Background):
            n_background += 1
            continue
        if isinstance(s, Circle):
            if not s.r > 0:
                raise SceneError("radius must be positive", f"{where}.shape.r")
            if math.hypot(*s.center) + s.r > R * (1 + 1e-12):
                raise SceneError("circle leaves the domain", f"{where}.shape")
        elif isinstance(s, Annulus):
            if not 0 < s.r_in < s.r_out:
                raise SceneError("need 0 < r_in < r_out", f"{where}.shape")
            if math.hypot(*s.center) + s.r_out > R * (1 + 1e-12):
                raise SceneError("annulus leaves the domain", f"{where}.shape")
        elif isinstance(s, Polygon):
            v = np.asarray(s.vertices, dtype=float)
            if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
                raise SceneError("polygon needs at least 3 vertices", f"{where}.shape.vertices")
            if np.any(np.hypot(v[:, 0], v[:, 1]) > R * (1 + 1e-12)):
                raise SceneError("polygon vertex outside the domain", f"{where}.shape.vertices")
            if not _shape_polygon(s).is_valid:
                raise SceneError("polygon is self-intersecting", f"{where}.shape.vertices")
    if n_background > 1:
        raise SceneError("at most one background piece", "pieces")

    solid = [(i, p.shape) for i, p in enumerate(pieces) if not isinstance(p.shape, Background)]
    for ai in range(len(solid)):
        for bi in range(ai + 1, len(solid)):
            (i, a), (j, b) = solid[ai], solid[bi]
            exact = _round_pair_disjoint(a, b)
            if exact is None:
                area = _shape_polygon(a).intersection(_shape_polygon(b)).area
                exact = area <= 1e-9
            if not exact:
                raise SceneError(f"overlaps pieces[{i}]", f"pieces[{j}].shape")


# -- 3D ball scenes -----------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    center: tuple[float, float, float]
    r: float


@dataclass(frozen=True)
class Shell:
    center: tuple[float, float, float]
    r_in: float
    r_out: float


@dataclass(frozen=True)
class BallPiece:
    id: int
    shape: Ball | Shell | Background


@dataclass(frozen=True)
class BallScene:
    """A ball centred at the origin partitioned into balls and spherical shells."""

    radius: float
    pieces: tuple[BallPiece, ...]
    coefficients: Coefficients
    phase: PhaseFunction

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.radius > 0:
            raise SceneError("radius must be positive", "domain.radius")
        if len(self.pieces) != len(self.coefficients.mu_a):
            raise SceneError("every piece needs coefficients", "pieces")


# -- scene files --------------------------------------------------------------

_TOP_KEYS = {"domain", "pieces", "phase"}
_PIECE_KEYS = {"id", "shape", "mu_a", "mu_s"}
_SHAPE_KEYS = {
    "circle": {"type", "center", "r"},
    "annulus": {"type", "center", "r_in", "r_out"},
    "polygon": {"type", "vertices"},
    "background": {"type"},
    "ball": {"type", "center", "r"},
    "shell": {"type", "center", "r_in", "r_out"},
}


def _reject_unknown(obj: dict, allowed: set, where: str):
    if not isinstance(obj, dict):
        raise SceneError("expected an object", where)
    extra = sorted(set(obj) - allowed)
    if extra:
        raise SceneError(f"unknown field(s) {extra}", where)


def _number(obj, key, where, default=None):
    if key not in obj:
        if default is None:
            raise SceneError("missing", f"{where}.{key}")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SceneError(f"expected a number, got {v!r}", f"{where}.{key}")
    return float(v)


def _point(obj, key, where, dim):
    v = obj.get(key)
    if not isinstance(v, list) or len(v) != dim or not all(isinstance(c, (int, float)) for c in v):
        raise SceneError(f"expected {dim} numbers", f"{where}.{key}")
    return tuple(float(c) for c in v)


def _parse_shape(obj, where, three_d):
    if not isinstance(obj, dict) or "type" not in obj:
        raise SceneError("shape needs a type", where)
    kind = obj["type"]
    allowed = ("ball", "shell", "background") if three_d else ("circle", "annulus", "polygon", "background")
    if kind not in allowed:
        raise SceneError(f"shape type {kind!r} not allowed here (expected one of {allowed})", f"{where}.type")
    _reject_unknown(obj, _SHAPE_KEYS[kind], where)
    dim = 3 if three_d else 2
    if kind == "background":
        return Background()
    if kind == "circle":
        return Circle(_point(obj, "center", where, 2), _number(obj, "r", where))
    if kind == "annulus":
        return Annulus(_point(obj, "center", where, 2), _number(obj, "r_in", where), _number(obj, "r_out", where))
    if kind == "polygon":
        verts = obj.get("vertices")
        if not isinstance(verts, list):
            raise SceneError("expected a list of points", f"{where}.vertices")
        return Polygon(tuple(_point({"v": v}, "v", f"{where}.vertices[{k}]", 2) for k, v in enumerate(verts)))
    if kind == "ball":
        return Ball(_point(obj, "center", where, dim), _number(obj, "r", where))
    return Shell(_point(obj, "center", where, dim), _number(obj, "r_in", where), _number(obj, "r_out", where))


def scene_from_dict(doc: dict[str, Any]) -> Scene | BallScene:
    _reject_unknown(doc, _TOP_KEYS, "scene")
    dom = doc.get("domain")
    _reject_unknown(dom, {"kind", "radius"}, "domain")
    kind = dom.get("kind", "unit-disk")
    three_d = kind == "ball"
    radius = _number(dom, "radius", "domain", default=1.0)

    ph = doc.get("phase", {})
    _reject_unknown(ph, {"kind", "g", "dimension"}, "phase")
    try:
        phase = PhaseFunction(
            ph.get("kind", "isotropic"),
            _number(ph, "g", "phase", default=0.0),
            int(ph.get("dimension", 3 if three_d else 2)),
        )
    except ConfigurationError as exc:
        field_name = "phase.g" if "g" in str(exc) else "phase"
        raise SceneError(str(exc), field_name) from None

    raw = doc.get("pieces", [])
    if not isinstance(raw, list):
        raise SceneError("expected a list", "pieces")
    pieces, mu_a, mu_s = [], [], []
    for i, p in enumerate(raw):
        where = f"pieces[{i}]"
        _reject_unknown(p, _PIECE_KEYS, where)
        if "id" not in p or isinstance(p["id"], bool) or not isinstance(p["id"], int):
            raise SceneError("integer id required", f"{where}.id")
        shape = _parse_shape(p.get("shape"), f"{where}.shape", three_d)
        pieces.append((BallPiece if three_d else Piece)(p["id"], shape))
        mu_a.append(_number(p, "mu_a", where, default=0.0))
        mu_s.append(_number(p, "mu_s", where, default=0.0))
    coeffs = Coefficients(tuple(mu_a), tuple(mu_s))

    if three_d:
        return BallScene(radius, tuple(pieces), coeffs, phase)
    try:
        domain = ConvexDomain(kind, radius)
    except ValueError as exc:
        raise SceneError(str(exc), "domain") from None
    return Scene(domain, tuple(pieces), coeffs, phase)


def load_scene(path) -> Scene | BallScene:
    """Read and validate a JSON scene file.

    Raises :class:`SceneError` with the line/column on parse failures and the
    offending field name on invariant violations.
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"line {exc.lineno} column {exc.colno}: {exc.msg}", str(path)) from None
    return scene_from_dict(doc)


def _shape_to_dict(shape) -> dict:
    if isinstance(shape, Background):
        return {"type": "background"}
    if isinstance(shape, (Circle, Ball)):
        kind = "circle" if isinstance(shape, Circle) else "ball"
        return {"type": kind, "center": list(shape.center), "r": shape.r}
    if isinstance(shape, (Annulus, Shell)):
        kind = "annulus" if isinstance(shape, Annulus) else "shell"
        return {"type": kind, "center": list(shape.center), "r_in": shape.r_in, "r_out": shape.r_out}
    return {"type": "polygon", "vertices": [list(v) for v in shape.vertices]}


def scene_to_dict(scene: Scene | BallScene) -> dict:
    if isinstance(scene, BallScene):
        domain = {"kind": "ball", "radius": scene.radius}
    else:
        domain = {"kind": scene.domain.kind, "radius": scene.domain.radius}
    c = scene.coefficients
    return {
        "domain": domain,
        "pieces": [
            {"id": p.id, "shape": _shape_to_dict(p.shape), "mu_a": c.mu_a[i], "mu_s": c.mu_s[i]}
            for i, p in enumerate(scene.pieces)
        ],
        "phase": {"kind": scene.phase.kind, "g": scene.phase.g, "dimension": scene.phase.dimension},
    }


def save_scene(scene: Scene | BallScene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")


def uniform_disk(mu_a: float, mu_s: float, radius: float = 1.0, phase: PhaseFunction | None = None) -> Scene:
    """Homogeneous disk; convenient for closed-form checks."""
    return Scene(
        ConvexDomain("unit-disk", radius),
        (Piece(0, Background()),),
        Coefficients((mu_a,), (mu_s,)),
        phase or PhaseFunction(),
    )


def vacuum(radius: float = 1.0) -> Scene:
    return Scene(ConvexDomain("unit-disk", radius))
