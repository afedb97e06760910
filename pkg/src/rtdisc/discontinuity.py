"""Split boundary illumination, predicted discontinuity sets and jump probes.

Boundary data that is ``C`` on one side of a line (plane) and zero on the
other creates a jump in the solution that travels along the characteristics
leaving the split points.  At the far end of such a characteristic the jump
of the outgoing trace equals ``C exp(-X mu_t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConvexDomain, FlatSegment, audit_convexity
from .media import BallScene, ConfigurationError, Scene
from .transport import RadianceField, check_outgoing, extend_to_outgoing

EPS_PROBE = 1e-2
DELTA_XI = 1e-6


class ProbeGeometryError(ValueError):
    """Both probes of a jump measurement landed on the same side of gamma."""


# -- boundary data ------------------------------------------------------------


@dataclass(frozen=True)
class SplitBoundaryData:
    """``C`` where ``x . n >= c`` (the A side and gamma), zero elsewhere."""

    radius: float
    normal: tuple[float, ...]
    offset: float
    amplitude: float

    @property
    def dimension(self) -> int:
        return len(self.normal)

    @property
    def sup_norm(self) -> float:
        return abs(self.amplitude)

    def on_a_side(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ np.asarray(self.normal) >= self.offset - 1e-12 * self.radius

    def __call__(self, points, dirs=None) -> np.ndarray:
        return np.where(self.on_a_side(points), float(self.amplitude), 0.0)

    @property
    def gamma(self) -> np.ndarray:
        """The two split points (2D) or the centre of the split circle (3D)."""
        n = np.asarray(self.normal, dtype=float)
        h = math.sqrt(self.radius**2 - self.offset**2)
        if self.dimension == 2:
            t = np.array([-n[1], n[0]])
            return np.stack([self.offset * n + h * t, self.offset * n - h * t])
        return (self.offset * n)[None, :]

    @property
    def gamma_radius(self) -> float:
        """Radius of gamma as a circle (3D); half the split chord in 2D."""
        return math.sqrt(self.radius**2 - self.offset**2)

    def angular_average(self, points, lo, hi) -> np.ndarray:
        """Mean of ``I_0(P(y, xi'))`` over direction cells ``[lo_k, hi_k]``.

        ``P(y, xi')`` lies on the A side for an arc of directions bounded by
        the directions from the two split points to ``y``, so the average is
        ``C`` times the covered fraction of each cell.  Points must lie in the
        closed disk.
        """
        if self.dimension != 2:
            raise ConfigurationError("angular averages are defined for 2D data only")
        y = np.asarray(points, dtype=float)
        lo = np.asarray(lo, dtype=float)[:, None]
        hi = np.asarray(hi, dtype=float)[:, None]
        g1, g2 = self.gamma
        a1 = np.arctan2(y[:, 1] - g1[1], y[:, 0] - g1[0])
        a2 = np.arctan2(y[:, 1] - g2[1], y[:, 0] - g2[0])
        two_pi = 2 * np.pi
        w = np.mod(a2 - a1, two_pi)
        mid = a1 + 0.5 * w
        xi = np.stack([np.cos(mid), np.sin(mid)], axis=1)
        b = np.einsum("ij,ij->i", y, xi)
        t2 = b + np.sqrt(np.maximum(b * b - (np.einsum("ij,ij->i", y, y) - self.radius**2), 0.0))
        first = self.on_a_side(y - t2[:, None] * xi)
        start = np.where(first, a1, a2)
        width = np.where(first, w, two_pi - w)

        d = np.mod(lo - start, two_pi)
        span = hi - lo
        ov = np.maximum(0.0, np.minimum(d + span, width) - d)
        ov += np.maximum(0.0, np.minimum(d + span, two_pi + width) - np.maximum(d, two_pi))
        return float(self.amplitude) * ov / span


def build_split_data(domain, normal, offset: float, amplitude: float = 1.0) -> SplitBoundaryData:
    """Split data for the line (plane) ``x . normal = offset``."""
    n = tuple(float(v) for v in normal)
    radius = domain.radius
    if abs(math.hypot(*n) - 1.0) > 1e-12:
        raise ConfigurationError(f"split normal must be a unit vector, got {list(n)}")
    if not abs(offset) < radius:
        raise ConfigurationError(f"split hyperplane x.n = {offset} does not cut the boundary (radius {radius})")
    if amplitude == 0 or not math.isfinite(amplitude):
        raise ConfigurationError(f"amplitude must be finite and nonzero, got {amplitude}")
    if isinstance(domain, ConvexDomain) and len(n) != 2:
        raise ConfigurationError("a 2D domain needs a 2D split normal")
    return SplitBoundaryData(float(radius), n, float(offset), float(amplitude))


# -- predicted discontinuities ------------------------------------------------


@dataclass(frozen=True)
class BoundaryFan:
    """Rays ``x* + t xi`` for every incoming ``xi`` at the split point ``x*``."""

    point: tuple[float, ...]


@dataclass(frozen=True)
class SegmentFamily:
    """Rays ``x + t xi`` from every ``x`` on a flat segment, fixed ``xi``."""

    segment: FlatSegment
    direction: tuple[float, float]


@dataclass
class DiscSet:
    boundary_induced: list[BoundaryFan] = field(default_factory=list)
    coefficient_induced: list[SegmentFamily] = field(default_factory=list)
    exceptional_directions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radius: float = 1.0

    def is_exceptional(self, xi, delta: float = DELTA_XI) -> np.ndarray:
        """Whether each direction lies within ``delta`` radians of an exceptional one."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        E = self.exceptional_directions
        if len(E) == 0:
            return np.zeros(len(xi), dtype=bool)
        cos = np.clip(xi @ E.T, -1.0, 1.0)
        return np.any(np.arccos(cos) <= delta, axis=1)

    def on_boundary_induced(self, points, dirs, tol: float = 1e-9) -> np.ndarray:
        """Whether the backward chord from each outgoing point ends at a split point."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        seeds = np.array([f.point for f in self.boundary_induced]).reshape(-1, p.shape[1])
        # x* - t xi reaches seed s when the perpendicular offset vanishes and t > 0
        rel = p[:, None, :] - seeds[None, :, :]
        t = np.einsum("nsi,ni->ns", rel, d)
        perp = rel - t[..., None] * d[:, None, :]
        return np.any((np.linalg.norm(perp, axis=-1) <= tol * self.radius) & (t > 0), axis=1)


def predict_disc(scene, data: SplitBoundaryData | None = None) -> DiscSet:
    """Superset of the discontinuity set: fans from gamma and flat-segment families."""
    if isinstance(scene, BallScene):
        fans = []
        if data is not None:
            fans = [BoundaryFan(tuple(data.gamma[0]))]
        # balls and shells have no flat interface parts
        return DiscSet(fans, [], np.zeros((0, 3)), scene.radius)
    fans = [] if data is None else [BoundaryFan(tuple(g)) for g in data.gamma]
    audit = audit_convexity(scene, n_rays=0)
    families = []
    dirs = []
    for seg in audit.flat_segments:
        for d in (seg.direction_plus, seg.direction_minus):
            families.append(SegmentFamily(seg, (float(d[0]), float(d[1]))))
            dirs.append(d)
    E = np.array(dirs).reshape(-1, 2)
    return DiscSet(fans, families, E, scene.domain.radius)


# -- jump extraction ----------------------------------------------------------


@dataclass(frozen=True)
class JumpMeasurement:
    point: tuple[float, float]
    direction: tuple[float, float]
    v_a: float
    v_b: float
    jump: float
    exceptional: bool = False
    eps: float = EPS_PROBE


def _rotate_on_circle(points: np.ndarray, arc: float) -> np.ndarray:
    r = np.linalg.norm(points, axis=1)
    a = np.arctan2(points[:, 1], points[:, 0]) + arc / r
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def _probe_values(field: RadianceField, points, dirs, eps: float):
    """Outgoing values at boundary points displaced by arc length +-eps and +-eps/2."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    offsets = (eps, -eps, 0.5 * eps, -0.5 * eps)
    probes = np.concatenate([_rotate_on_circle(p, o) for o in offsets])
    pdirs = np.concatenate([d] * len(offsets))
    trace = extend_to_outgoing(field, probes, pdirs)
    return probes, trace.values.reshape(len(offsets), len(p))


def _richardson(full: np.ndarray, half: np.ndarray) -> np.ndarray:
    return 2.0 * half - full


def extract_jumps(field: RadianceField, data: SplitBoundaryData, points, dirs,
                  eps: float = EPS_PROBE, delta_xi: float = DELTA_XI,
                  disc: DiscSet | None = None) -> list[JumpMeasurement]:
    """Jumps ``v_A - v_B`` of the outgoing trace across split characteristics.

    Probes sit at arc length ``eps`` and ``eps/2`` on either side of each
    detector; the side is the one where the probe's backward chord lands.
    The two probe distances are combined by Richardson extrapolation.
    """
    scene = field.scene
    R = scene.domain.radius
    p, d = check_outgoing(R, points, dirs)
    disc = disc or predict_disc(scene, data)
    flags = disc.is_exceptional(d, delta_xi)
    probes, vals = _probe_values(field, p, d, eps)
    n = len(p)
    pdirs = np.concatenate([d] * 4)
    b = np.einsum("ij,ij->i", probes, pdirs)
    t2 = b + np.sqrt(np.maximum(b * b - (np.einsum("ij,ij->i", probes, probes) - R * R), 0.0))
    side = data.on_a_side(probes - t2[:, None] * pdirs).reshape(4, n)
    out = []
    for i in range(n):
        pairs = []
        for plus, minus in ((0, 1), (2, 3)):
            sa, sb = side[plus, i], side[minus, i]
            if sa == sb:
                raise ProbeGeometryError(
                    f"probes at +-{eps if plus == 0 else eps / 2:g} around {p[i].tolist()} "
                    "project to the same side of gamma"
                )
            va, vb = (vals[plus, i], vals[minus, i]) if sa else (vals[minus, i], vals[plus, i])
            pairs.append((va, vb))
        (va1, vb1), (va2, vb2) = pairs
        va = float(_richardson(va1, va2))
        vb = float(_richardson(vb1, vb2))
        out.append(JumpMeasurement(tuple(p[i]), tuple(d[i]), va, vb, va - vb, bool(flags[i]), eps))
    return out


def extract_jump(field: RadianceField, data: SplitBoundaryData, x_star, xi_star,
                 eps: float = EPS_PROBE, delta_xi: float = DELTA_XI) -> JumpMeasurement:
    return extract_jumps(field, data, [x_star], [xi_star], eps, delta_xi)[0]


def probe_difference(field: RadianceField, points, dirs, eps: float = EPS_PROBE) -> np.ndarray:
    """Richardson-extrapolated ``v(+eps) - v(-eps)`` along the boundary.

    Off every predicted ray family this tends to zero as the grid is refined.
    """
    p, d = check_outgoing(field.scene.domain.radius, points, dirs)
    _, vals = _probe_values(field, p, d, eps)
    return _richardson(vals[0] - vals[1], vals[2] - vals[3])
