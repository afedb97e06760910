"""Ray geometry in disk domains partitioned into circles, annuli and polygons.

Rays are parametrised backward, ``x - t*xi`` with ``t >= 0``, which is the
direction along which the integral form of the transport equation is
evaluated.  All domains are disks centred at the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

# Discriminant below which a line/circle contact is a grazing, not a crossing.
TANGENT_TOL = 1e-12
UNIT_TOL = 1e-12


class DomainError(ValueError):
    """A point or direction lies outside the admissible set."""


@dataclass(frozen=True)
class ConvexDomain:
    """Disk of the given radius centred at the origin.

    ``kind`` is ``"unit-disk"`` or ``"unit-ball-slice"``; the latter is the
    cross-section of a ball and carries its reduced radius.
    """

    kind: str = "unit-disk"
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("unit-disk", "unit-ball-slice"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"domain radius must be positive, got {self.radius!r}")

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def contains(self, points, closed: bool = True) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        r2 = np.einsum("...i,...i->...", p, p)
        lim = self.radius**2
        return r2 <= lim * (1 + 1e-12) if closed else r2 < lim

    def normal(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def boundary_point(self, angle) -> np.ndarray:
        a = np.asarray(angle, dtype=float)
        return self.radius * np.stack([np.cos(a), np.sin(a)], axis=-1)


# -- shapes -------------------------------------------------------------------


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    r: float

    def contains(self, p: np.ndarray) -> np.ndarray:
        d = p - np.asarray(self.center)
        return np.einsum("...i,...i->...", d, d) <= self.r**2

    def circles(self):
        return [(self.center[0], self.center[1], self.r)]

    def edges(self):
        return []


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, float]
    r_in: float
    r_out: float

    def contains(self, p: np.ndarray) -> np.ndarray:
        d = p - np.asarray(self.center)
        d2 = np.einsum("...i,...i->...", d, d)
        return (d2 >= self.r_in**2) & (d2 <= self.r_out**2)

    def circles(self):
        cx, cy = self.center
        return [(cx, cy, self.r_in), (cx, cy, self.r_out)]

    def edges(self):
        return []


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    def contains(self, p: np.ndarray) -> np.ndarray:
        return points_in_polygon(p, np.asarray(self.vertices, dtype=float))

    def circles(self):
        return []

    def edges(self):
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]


@dataclass(frozen=True)
class Background:
    """Everything in the domain not claimed by an earlier piece."""

    def contains(self, p: np.ndarray) -> np.ndarray:
        return np.ones(np.shape(p)[:-1], dtype=bool)

    def circles(self):
        return []

    def edges(self):
        return []


Shape = Union[Circle, Annulus, Polygon, Background]


@dataclass(frozen=True)
class Piece:
    id: int
    shape: Shape


@dataclass(frozen=True)
class FlatSegment:
    piece_id: int
    endpoints: tuple[tuple[float, float], tuple[float, float]]

    @property
    def direction_plus(self) -> np.ndarray:
        a, b = (np.asarray(e, dtype=float) for e in self.endpoints)
        d = b - a
        return d / np.linalg.norm(d)

    @property
    def direction_minus(self) -> np.ndarray:
        return -self.direction_plus


def points_in_polygon(p, vertices: np.ndarray) -> np.ndarray:
    """Even-odd rule; boundary points are not guaranteed either way."""
    p = np.asarray(p, dtype=float)
    px, py = p[..., 0], p[..., 1]
    inside = np.zeros(px.shape, dtype=bool)
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        straddle = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= straddle & (px < xc)
    return inside


def locate(domain: ConvexDomain, pieces: Sequence[Piece], points) -> np.ndarray:
    """Index into ``pieces`` of the piece holding each point, -1 if none.

    Piece closures are used and the first declared piece wins.
    """
    p = np.asarray(points, dtype=float)
    out = np.full(p.shape[:-1], -1, dtype=np.int64)
    free = domain.contains(p)
    for i, piece in enumerate(pieces):
        hit = free & piece.shape.contains(p)
        out[hit] = i
        free &= ~hit
    return out


# -- chords -------------------------------------------------------------------


def _check_direction(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if abs(np.linalg.norm(xi) - 1.0) > UNIT_TOL:
        raise DomainError(f"direction {xi.tolist()} is not a unit vector")
    return xi


def chord_roots(radius: float, x, xi):
    """Roots ``t1 <= t2`` of ``|x - t xi| = radius`` and the discriminant.

    Vectorised over leading axes; roots are NaN where the line misses.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    b = np.einsum("...i,...i->...", x, xi)
    c = np.einsum("...i,...i->...", x, x) - radius**2
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(disc)
    return b - sq, b + sq, disc


def chord_exit_times(domain: ConvexDomain, x, xi) -> tuple[float, float]:
    """Backward and forward exit times ``(tau_minus, tau_plus)`` of the ray."""
    x = np.asarray(x, dtype=float)
    xi = _check_direction(xi)
    if not domain.contains(x):
        raise DomainError(f"point {x.tolist()} is outside the domain")
    t1, t2, _ = chord_roots(domain.radius, x, xi)
    # backward roots are t1 <= 0 <= t2; the forward exit is -t1
    return max(float(t2), 0.0), max(float(-t1), 0.0)


def boundary_projection(domain: ConvexDomain, x, xi) -> np.ndarray:
    """Entry point ``x - tau_minus * xi`` of the characteristic through x."""
    tau_minus, _ = chord_exit_times(domain, x, xi)
    return np.asarray(x, dtype=float) - tau_minus * np.asarray(xi, dtype=float)


# -- crossings ----------------------------------------------------------------


class Crossing(NamedTuple):
    t: float
    before: int | None
    after: int | None
    tangent: bool = False


def _circle_hits(cx, cy, r, x, xi):
    d = np.asarray(x) - (cx, cy)
    b = float(d @ xi)
    disc = b * b - (float(d @ d) - r * r)
    if disc < -TANGENT_TOL:
        return []
    if disc <= TANGENT_TOL:
        return [(b, True)]
    sq = math.sqrt(disc)
    return [(b - sq, False), (b + sq, False)]


def _edge_hit(a, b, x, xi):
    ex, ey = b[0] - a[0], b[1] - a[1]
    rx, ry = x[0] - a[0], x[1] - a[1]
    det = xi[0] * ey - xi[1] * ex
    if abs(det) < 1e-15:
        return None
    t = (rx * ey - ry * ex) / det
    u = (xi[0] * ry - xi[1] * rx) / det
    if -1e-12 <= u <= 1 + 1e-12:
        return t
    return None


def piece_crossings(scene, x, xi) -> list[Crossing]:
    """Ordered crossings of piece boundaries along ``x - t*xi``, ``0 <= t <= tau_minus``.

    ``before``/``after`` are piece ids on either side (``None`` outside every
    piece).  Grazing contacts with circles are reported with ``tangent=True``
    and do not change the piece.
    """
    domain = scene.domain
    x = np.asarray(x, dtype=float)
    xi = _check_direction(xi)
    tau_minus, _ = chord_exit_times(domain, x, xi)

    raw: list[tuple[float, bool]] = []
    for piece in scene.pieces:
        for cx, cy, r in piece.shape.circles():
            raw.extend(_circle_hits(cx, cy, r, x, xi))
        for a, b in piece.shape.edges():
            t = _edge_hit(a, b, x, xi)
            if t is not None:
                raw.append((t, False))
    raw = sorted((t, tan) for t, tan in raw if -1e-12 <= t <= tau_minus + 1e-12)

    merged: list[tuple[float, bool]] = []
    for t, tan in raw:
        t = min(max(t, 0.0), tau_minus)
        if merged and t - merged[-1][0] <= 1e-12:
            merged[-1] = (merged[-1][0], merged[-1][1] and tan)
        else:
            merged.append((t, tan))

    ids = [p.id for p in scene.pieces]

    def piece_at(t):
        idx = int(locate(domain, scene.pieces, x - t * xi))
        return None if idx < 0 else ids[idx]

    transversal = [t for t, tan in merged if not tan]
    breaks = [0.0] + transversal + [tau_minus]
    out = []
    for t, tan in merged:
        if tan:
            p = piece_at(t)
            out.append(Crossing(t, p, p, True))
            continue
        k = transversal.index(t) + 1
        out.append(
            Crossing(t, piece_at(0.5 * (breaks[k - 1] + t)), piece_at(0.5 * (t + breaks[k + 1])))
        )
    return out


# -- generalized convexity ----------------------------------------------------


@dataclass
class ConvexityAudit:
    satisfied: bool
    flat_segments: list[FlatSegment] = field(default_factory=list)
    max_crossings: int = 0

    @property
    def directed_families(self) -> int:
        return 2 * len(self.flat_segments)


def audit_convexity(scene, n_rays: int = 2000, seed: int = 0) -> ConvexityAudit:
    """Flat interface segments and a sampled bound on interface crossings."""
    domain = scene.domain
    flats = []
    for piece in scene.pieces:
        for a, b in piece.shape.edges():
            mid = 0.5 * (np.asarray(a) + np.asarray(b))
            if domain.contains(mid, closed=False):
                flats.append(FlatSegment(piece.id, (tuple(a), tuple(b))))

    rng = np.random.default_rng(seed)
    r = domain.radius * np.sqrt(rng.uniform(0, 1, n_rays)) * (1 - 1e-9)
    a = rng.uniform(0, 2 * np.pi, n_rays)
    th = rng.uniform(0, 2 * np.pi, n_rays)
    most = 0
    for ri, ai, ti in zip(r, a, th):
        x = (ri * math.cos(ai), ri * math.sin(ai))
        xi = (math.cos(ti), math.sin(ti))
        n = sum(1 for c in piece_crossings(scene, x, xi) if not c.tangent)
        most = max(most, n)
    return ConvexityAudit(satisfied=not flats, flat_segments=flats, max_crossings=most)
