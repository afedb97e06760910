"""Neumann-series solver for the integral form of the transport equation.

The radiance is discretised on a uniform node lattice over the bounding
square times ``N_theta`` uniformly spaced directions.  The ballistic term is
evaluated exactly from the boundary data; each scattering order is a ray
march of the source ``G = sum_k' w p(xi . xi_k') I(., xi_k')`` with exact
per-piece attenuation and bilinear sampling of G.

Nodes just outside the disk are kept as interpolation support.  Their values
continue the solution along characteristics: downstream of the disk they
integrate the full chord, upstream (or off every chord) they carry the
boundary value at the entry point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from ._backend import kernels
from ._tables import GridSpec, pack_scene
from ._reference import decompose
from .geometry import DomainError, TANGENT_TOL, chord_roots
from .media import ConfigurationError, Scene, phase_eval

log = logging.getLogger(__name__)

# Tolerance on |x*| = R when accepting detector points.
BOUNDARY_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """The Neumann series did not reach the tolerance within max_iter."""

    def __init__(self, message: str, last_ratio: float, iterations: int):
        super().__init__(message)
        self.last_ratio = last_ratio
        self.iterations = iterations


class ContractionError(RuntimeError):
    """An iteration ratio exceeded the contraction bound plus slack."""


class BoundaryData(Protocol):
    def __call__(self, points: np.ndarray, dirs: np.ndarray) -> np.ndarray: ...


# -- grids --------------------------------------------------------------------


@dataclass(frozen=True)
class AngularGrid:
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError(f"need at least 2 directions, got {self.n}")

    @property
    def spacing(self) -> float:
        return 2 * math.pi / self.n

    @property
    def angles(self) -> np.ndarray:
        return self.spacing * np.arange(self.n)

    @property
    def directions(self) -> np.ndarray:
        a = self.angles
        return np.stack([np.cos(a), np.sin(a)], axis=1)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, self.spacing)


@dataclass(frozen=True)
class SpatialGrid:
    """``n x n`` nodes spanning ``[-radius, radius]^2``, indexed ``[iy, ix]``."""

    n: int
    radius: float

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError(f"need at least 2 nodes per axis, got {self.n}")

    @property
    def dx(self) -> float:
        return 2 * self.radius / (self.n - 1)

    @property
    def coords(self) -> np.ndarray:
        return -self.radius + self.dx * np.arange(self.n)

    @property
    def spec(self) -> GridSpec:
        return GridSpec(-self.radius, self.dx, self.n)

    def points(self) -> np.ndarray:
        c = self.coords
        X, Y = np.meshgrid(c, c)
        return np.stack([X, Y], axis=-1)

    def interior(self) -> np.ndarray:
        """Nodes in the closed domain; the only ones used for norms."""
        p = self.points()
        return np.einsum("...i,...i->...", p, p) <= self.radius**2 * (1 + 1e-12)


@dataclass(frozen=True)
class SolverOptions:
    nx: int = 256
    ntheta: int = 128
    ray_step: float = 2e-3
    tol: float = 1e-10
    max_iter: int = 200
    slack: float = 0.02

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigurationError(f"tol must be positive, got {self.tol}")
        if self.ray_step <= 0:
            raise ConfigurationError(f"ray_step must be positive, got {self.ray_step}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")


# -- boundary data helpers ----------------------------------------------------


@dataclass(frozen=True)
class ConstantBoundary:
    """``I_0 = value`` on the whole incoming boundary."""

    value: float = 1.0

    def __call__(self, points, dirs):
        return np.full(np.shape(points)[:-1], float(self.value))

    @property
    def sup_norm(self) -> float:
        return abs(self.value)


@dataclass(frozen=True)
class SampledBoundary:
    """Boundary data tabulated at boundary angles, looked up by nearest sample.

    Direction dependence is ignored.  Nearest-sample lookup never blends the
    two sides of a jump in the data.
    """

    angles: np.ndarray
    values: np.ndarray

    def __call__(self, points, dirs):
        p = np.asarray(points, dtype=float)
        a = np.mod(np.arctan2(p[..., 1], p[..., 0]), 2 * np.pi)
        ref = np.mod(np.asarray(self.angles, dtype=float), 2 * np.pi)
        d = np.abs(np.angle(np.exp(1j * (a[..., None] - ref))))
        return np.asarray(self.values, dtype=float)[np.argmin(d, axis=-1)]

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def _sup_norm(boundary, sample: np.ndarray) -> float:
    s = getattr(boundary, "sup_norm", None)
    return float(s) if s is not None else float(np.max(np.abs(sample), initial=0.0))


# -- operator -----------------------------------------------------------------


def phase_matrix(scene: Scene, dirs_out: np.ndarray, angular: AngularGrid) -> np.ndarray:
    """Row-normalised quadrature weights ``w p(xi . xi_k')``.

    Rows sum to one so that the discrete scattering operator conserves the
    phase normalisation exactly.
    """
    cos = np.clip(np.asarray(dirs_out) @ angular.directions.T, -1.0, 1.0)
    W = phase_eval(scene.phase, cos) * angular.spacing
    return W / W.sum(axis=1, keepdims=True)


class TransportOperator:
    """Geometry of one (scene, grid) pair, reusable across boundary data."""

    def __init__(self, scene: Scene, nx: int = 256, ntheta: int = 128, ray_step: float = 2e-3):
        self.scene = scene
        self.tables = pack_scene(scene)
        self.angular = AngularGrid(ntheta)
        self.grid = SpatialGrid(nx, scene.domain.radius)
        self.ray_step = float(ray_step)
        R = scene.domain.radius

        pts = self.grid.points()
        r = np.hypot(pts[..., 0], pts[..., 1])
        reach = R + 1.5 * math.sqrt(2) * self.grid.dx
        self.active = r <= reach
        self.interior = self.grid.interior()
        self.node_iy, self.node_ix = np.nonzero(self.active)
        self.nodes = pts[self.node_iy, self.node_ix]
        inner = self.interior[self.node_iy, self.node_ix]
        self._inner = inner

        dirs = self.angular.directions
        K, m = len(dirs), len(self.nodes)
        self.decay = np.empty((K, m))
        self.entry = np.empty((K, m, 2))
        for k in range(K):
            xi = np.broadcast_to(dirs[k], self.nodes.shape)
            depth, _ = kernels.optical_depth(self.tables, self.nodes, xi)
            self.decay[k] = np.exp(-depth)
            self.entry[k] = _entry_points(R, self.nodes, xi)
        self.phase = phase_matrix(scene, dirs, self.angular)

    # shapes
    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.angular.n, self.grid.n, self.grid.n)

    def _scatter_nodes(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        out[:, self.node_iy, self.node_ix] = values
        return out

    def boundary_samples(self, boundary) -> np.ndarray:
        dirs = np.broadcast_to(self.angular.directions[:, None, :], self.entry.shape)
        return np.asarray(boundary(self.entry, dirs), dtype=float)

    def ballistic(self, boundary) -> np.ndarray:
        """I^(0) at every node and direction."""
        return self._scatter_nodes(self.decay * self.boundary_samples(boundary))

    def smoothed_ballistic(self, boundary) -> np.ndarray:
        """Ballistic term with the boundary data averaged over each angular cell.

        Used only as the first scattering source: the angular integral of a
        jump in I^(0) is continuous in space, while a point-sampled quadrature
        of it is not.  Falls back to point values when the data cannot
        average itself.
        """
        vals = self.boundary_samples(boundary)
        avg = getattr(boundary, "angular_average", None)
        if avg is not None:
            inner = self._inner
            half = 0.5 * self.angular.spacing
            th = self.angular.angles
            vals = vals.copy()
            vals[:, inner] = avg(self.nodes[inner], th - half, th + half)
        return self._scatter_nodes(self.decay * vals)

    def source(self, values: np.ndarray) -> np.ndarray:
        K = self.angular.n
        return (self.phase @ values.reshape(K, -1)).reshape(values.shape)

    def march_source(self, G: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        kernels.sweep(
            self.tables, G, self.grid.spec, self.angular.directions,
            self.node_ix, self.node_iy, self.ray_step, out,
        )
        return out

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """One application of the scattering operator."""
        return self.march_source(self.source(values))

    def sup(self, values: np.ndarray) -> float:
        return float(np.max(np.abs(values[:, self.interior]), initial=0.0))

    def contraction_bound(self) -> float:
        """``sup (1 - exp(-M_t(x, xi; tau_-)))`` over interior nodes."""
        d = self.decay[:, self._inner]
        return float(np.max(1 - d, initial=0.0))


def _entry_points(R: float, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Boundary point feeding each node along ``-xi``.

    Inside the disk this is ``P(x, xi)``.  Outside it is the far end of the
    chord, the forward entry point, or the radial projection when the line
    misses the disk.
    """
    _, t2, disc = chord_roots(R, x, xi)
    hit = disc > TANGENT_TOL
    p = x - np.where(hit, t2, 0.0)[:, None] * xi
    r = np.linalg.norm(x, axis=1, keepdims=True)
    radial = R * x / np.where(r > 0, r, 1.0)
    return np.where(hit[:, None], p, radial)


# -- fields -------------------------------------------------------------------


@dataclass
class RadianceField:
    operator: TransportOperator
    boundary: Callable
    ballistic: np.ndarray
    scattered: np.ndarray
    first_scatter: np.ndarray
    iterations: int
    ratios: list[float] = field(default_factory=list)
    m_hat: float = 0.0
    boundary_sup: float = 0.0
    _source: np.ndarray | None = field(default=None, repr=False)

    @property
    def values(self) -> np.ndarray:
        return self.ballistic + self.scattered

    @property
    def scene(self) -> Scene:
        return self.operator.scene

    def source_values(self) -> np.ndarray:
        """Radiance entering the scattering source (smoothed ballistic part)."""
        if self._source is None:
            self._source = self.operator.smoothed_ballistic(self.boundary) + self.scattered
        return self._source

    def residual(self) -> float:
        """Sup-norm defect of the discrete integral equation at interior nodes."""
        if not self.scene.scatters:
            return 0.0
        r = self.scattered - self.first_scatter - self.operator.scatter(self.scattered)
        return self.operator.sup(r)


def ballistic_term(scene: Scene, boundary, options: SolverOptions | None = None,
                   operator: TransportOperator | None = None) -> np.ndarray:
    op = operator or _operator(scene, options or SolverOptions())
    return op.ballistic(boundary)


def scatter_step(scene: Scene, current: np.ndarray, options: SolverOptions | None = None,
                 operator: TransportOperator | None = None) -> np.ndarray:
    op = operator or _operator(scene, options or SolverOptions())
    if not scene.scatters:
        return np.zeros(op.shape)
    return op.scatter(np.asarray(current, dtype=float))


def _operator(scene: Scene, options: SolverOptions) -> TransportOperator:
    return TransportOperator(scene, options.nx, options.ntheta, options.ray_step)


def solve(scene: Scene, boundary, options: SolverOptions | None = None,
          operator: TransportOperator | None = None) -> RadianceField:
    """Sum the Neumann series until ``sup|I^(n)| <= tol * sup|I_0|``.

    Raises :class:`ContractionError` when a ratio ``sup|I^(n+1)|/sup|I^(n)|``
    exceeds the grid contraction bound plus ``options.slack`` and
    :class:`ConvergenceError` when ``max_iter`` terms are not enough.
    """
    opt = options or SolverOptions()
    op = operator or _operator(scene, opt)
    I0 = op.ballistic(boundary)
    bsup = _sup_norm(boundary, op.boundary_samples(boundary))
    m_hat = op.contraction_bound()
    zero = np.zeros(op.shape)
    if not scene.scatters or bsup == 0.0:
        return RadianceField(op, boundary, I0, zero, zero, 1, [], m_hat, bsup)

    threshold = opt.tol * bsup
    current = op.smoothed_ballistic(boundary)
    prev_sup = op.sup(I0)
    total = np.zeros(op.shape)
    first = None
    ratios: list[float] = []
    n = 0
    while True:
        if n >= opt.max_iter:
            last = ratios[-1] if ratios else float("nan")
            raise ConvergenceError(
                f"Neumann series not converged after {opt.max_iter} terms (last ratio {last:.4g})",
                last, n,
            )
        nxt = op.scatter(current)
        n += 1
        s = op.sup(nxt)
        rho = s / prev_sup if prev_sup > 0 else 0.0
        ratios.append(rho)
        log.debug("iteration %d: sup %.3e ratio %.4f", n, s, rho)
        if rho > m_hat + opt.slack:
            raise ContractionError(f"iteration {n}: ratio {rho:.4f} exceeds bound {m_hat:.4f} + {opt.slack}")
        total += nxt
        if first is None:
            first = nxt
        current, prev_sup = nxt, s
        if s <= threshold:
            break
    return RadianceField(op, boundary, I0, total, first, n + 1, ratios, m_hat, bsup)


# -- outgoing trace -----------------------------------------------------------


@dataclass(frozen=True)
class OutgoingTrace:
    points: np.ndarray
    dirs: np.ndarray
    ballistic: np.ndarray
    scattered: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.ballistic + self.scattered


def check_outgoing(radius: float, points, dirs) -> tuple[np.ndarray, np.ndarray]:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    r = np.linalg.norm(p, axis=1)
    if np.any(np.abs(r - radius) > BOUNDARY_TOL * max(radius, 1.0)):
        raise DomainError("detector points must lie on the domain boundary")
    if np.any(np.abs(np.linalg.norm(d, axis=1) - 1) > 1e-12):
        raise DomainError("detector directions must be unit vectors")
    if np.any(np.einsum("ij,ij->i", p, d) <= 0):
        raise DomainError("detector direction is not outgoing (n(x*) . xi* <= 0)")
    return p, d


def extend_to_outgoing(field: RadianceField, points, dirs) -> OutgoingTrace:
    """Outgoing values by re-integrating the chord that ends at each detector."""
    op = field.operator
    scene = field.scene
    p, d = check_outgoing(scene.domain.radius, points, dirs)
    depth, _ = kernels.optical_depth(op.tables, p, d)
    entry = _entry_points(scene.domain.radius, p, d)
    ballistic = np.exp(-depth) * np.asarray(field.boundary(entry, d), dtype=float)
    scattered = np.zeros(len(p))
    if scene.scatters and field.iterations > 1:
        uniq, inv = np.unique(d, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        W = phase_matrix(scene, uniq, op.angular)
        K = op.angular.n
        src = field.source_values()
        G = (W @ src.reshape(K, -1)).reshape(len(uniq), op.grid.n, op.grid.n)
        scattered = kernels.march(op.tables, G, op.grid.spec, inv, p, d, op.ray_step)
    return OutgoingTrace(p, d, ballistic, scattered)


def optical_path(scene: Scene, x, xi, s: float) -> float:
    """``M_t(x, xi; s)``: integral of mu_t over ``x - r xi``, ``0 <= r <= s``."""
    if s < 0:
        raise ValueError(f"path length must be >= 0, got {s}")
    tab = pack_scene(scene)
    breaks, piece, _ = decompose(tab, np.asarray(x, dtype=float)[None], np.asarray(xi, dtype=float)[None])
    mut = np.append(tab.mu_t, 0.0)[piece[0]]
    b = np.minimum(breaks[0], s)
    return float(np.sum(mut * np.diff(b)))
