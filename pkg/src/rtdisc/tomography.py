"""X-ray transform samples from boundary jumps and filtered back projection.

Parallel-beam coordinates: the line with normal angle ``phi`` and offset
``s`` is ``{s n + t xi}`` with ``n = (cos phi, sin phi)`` and
``xi = (-sin phi, cos phi)``.  Its sample is measured at the exit point
``s n + sqrt(R^2 - s^2) xi`` with outgoing direction ``xi``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._backend import kernels
from ._tables import pack_scene
from .discontinuity import (
    DELTA_XI,
    EPS_PROBE,
    DiscSet,
    ProbeGeometryError,
    build_split_data,
    extract_jumps,
    predict_disc,
)
from .geometry import Annulus, Background, Circle, ConvexDomain, DomainError, Piece
from .media import Ball, BallScene, Coefficients, PhaseFunction, Scene, Shell
from .transport import SolverOptions, TransportOperator, solve

log = logging.getLogger(__name__)

JUMP_FLOOR = 1e-12
MAX_MASKED_FRACTION = 0.05

# Grid for the per-placement solves of a sinogram.  The jump comes from the
# exactly integrated ballistic part; the scattered part only has to be
# resolved well enough that it cancels between the two probes.
SINOGRAM_OPTIONS = SolverOptions(nx=10, ntheta=8, ray_step=0.1, tol=1e-4, max_iter=200)


class SinogramDataError(ValueError):
    """A non-positive jump at an unmasked entry; the solve is under-resolved."""


class ReconstructionError(ValueError):
    """The sinogram cannot be filtered and back-projected."""


# -- sinograms ----------------------------------------------------------------


def sinogram_angles(n_phi: int) -> np.ndarray:
    return np.pi * np.arange(n_phi) / n_phi


def sinogram_offsets(n_s: int, radius: float) -> np.ndarray:
    return -radius + (np.arange(n_s) + 0.5) * (2 * radius / n_s)


def line_frame(phi: float):
    n = np.array([math.cos(phi), math.sin(phi)])
    xi = np.array([-math.sin(phi), math.cos(phi)])
    return n, xi


@dataclass
class Sinogram:
    angles: np.ndarray
    offsets: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    radius: float
    reversed_values: np.ndarray | None = None
    exceptional: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_csv(self, path) -> None:
        lines = ["angle_index,offset_index,angle_rad,offset,value,masked"]
        for m, phi in enumerate(self.angles):
            for l, s in enumerate(self.offsets):
                lines.append(
                    f"{m},{l},{phi:.17g},{s:.17g},{self.values[m, l]:.17g},{int(self.mask[m, l])}"
                )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, radius: float | None = None) -> "Sinogram":
        rows = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="ascii")
        rows = np.atleast_1d(rows)
        n_phi = int(rows["angle_index"].max()) + 1
        n_s = int(rows["offset_index"].max()) + 1
        if len(rows) != n_phi * n_s:
            raise ReconstructionError(f"expected {n_phi * n_s} rows, found {len(rows)}")
        values = np.full((n_phi, n_s), np.nan)
        mask = np.zeros((n_phi, n_s), dtype=bool)
        angles = np.zeros(n_phi)
        offsets = np.zeros(n_s)
        for r in rows:
            m, l = int(r["angle_index"]), int(r["offset_index"])
            values[m, l] = float(r["value"])
            mask[m, l] = bool(int(r["masked"]))
            angles[m] = float(r["angle_rad"])
            offsets[l] = float(r["offset"])
        if radius is None:
            step = offsets[1] - offsets[0] if n_s > 1 else 2 * abs(offsets[0])
            radius = float(offsets[-1] + 0.5 * step)
        return cls(angles, offsets, values, mask, radius)


def xray_forward(scene: Scene, phi, s) -> np.ndarray | float:
    """Exact line integral of mu_t along the line ``(phi, s)``; zero for ``|s| >= R``."""
    phi_a, s_a = np.broadcast_arrays(np.asarray(phi, dtype=float), np.asarray(s, dtype=float))
    R = scene.domain.radius
    n = np.stack([np.cos(phi_a), np.sin(phi_a)], axis=-1).reshape(-1, 2)
    xi = np.stack([-np.sin(phi_a), np.cos(phi_a)], axis=-1).reshape(-1, 2)
    sv = s_a.reshape(-1)
    inside = np.abs(sv) < R
    h = np.sqrt(np.where(inside, R * R - sv * sv, 0.0))
    x = sv[:, None] * n + h[:, None] * xi
    depth, _ = kernels.optical_depth(pack_scene(scene), x, xi)
    out = np.where(inside, depth, 0.0).reshape(s_a.shape)
    return float(out) if out.ndim == 0 else out


def xray_sinogram(scene: Scene, n_phi: int, n_s: int) -> Sinogram:
    """Analytic sinogram from :func:`xray_forward`, nothing masked."""
    R = scene.domain.radius
    phi = sinogram_angles(n_phi)
    s = sinogram_offsets(n_s, R)
    vals = xray_forward(scene, phi[:, None], s[None, :])
    return Sinogram(phi, s, vals, np.zeros(vals.shape, dtype=bool), R)


def _sinogram_row(scene, op, options, disc, phi, offsets, amplitude, eps, delta_xi, floor):
    R = scene.domain.radius
    n, xi = line_frame(phi)
    exceptional = bool(disc.is_exceptional(np.stack([xi, -xi]), delta_xi).any())
    vals = np.full(len(offsets), np.nan)
    rev = np.full(len(offsets), np.nan)
    mask = np.zeros(len(offsets), dtype=bool)
    for l, s in enumerate(offsets):
        data = build_split_data(scene.domain, n, float(s), amplitude)
        field = solve(scene, data, options, operator=op)
        h = math.sqrt(R * R - s * s)
        exit_fwd = s * n + h * xi
        exit_rev = s * n - h * xi
        try:
            jf, jr = extract_jumps(field, data, [exit_fwd, exit_rev], [xi, -xi], eps, delta_xi, disc)
        except ProbeGeometryError:
            mask[l] = True
            continue
        for j, target in ((jf.jump, vals), (jr.jump, rev)):
            ratio = j / amplitude
            if ratio > 0:
                target[l] = -math.log(ratio)
        ratio = jf.jump / amplitude
        if exceptional:
            mask[l] = True
        elif ratio <= 0:
            raise SinogramDataError(
                f"non-positive jump {jf.jump:.3e} at angle {phi:.6f}, offset {s:.6f}; refine the solve grid"
            )
        elif ratio <= floor:
            mask[l] = True
    return vals, rev, mask, exceptional


def sinogram_from_jumps(
    scene: Scene,
    n_phi: int = 360,
    n_s: int = 256,
    amplitude: float = 1.0,
    options: SolverOptions = SINOGRAM_OPTIONS,
    eps: float = EPS_PROBE,
    delta_xi: float = DELTA_XI,
    jump_floor: float = JUMP_FLOOR,
    progress: Callable[[int, int], None] | None = None,
) -> Sinogram:
    """Measure ``-log(jump / C)`` for every parallel-beam line.

    For each line the split is placed on the line itself, so the split
    points are the chord ends and the exit point sees the jump travelling
    along the chord.  Every placement is one solve; the reversed chord
    (exit at the other end) is measured from the same solve and kept in
    ``reversed_values``.  The transport operator is built once and reused.
    """
    if amplitude == 0:
        raise SinogramDataError("amplitude C must be nonzero")
    R = scene.domain.radius
    phi = sinogram_angles(n_phi)
    s = sinogram_offsets(n_s, R)
    op = TransportOperator(scene, options.nx, options.ntheta, options.ray_step)
    disc = predict_disc(scene)
    vals = np.full((n_phi, n_s), np.nan)
    rev = np.full((n_phi, n_s), np.nan)
    mask = np.zeros((n_phi, n_s), dtype=bool)
    exc = np.zeros(n_phi, dtype=bool)
    for m, p in enumerate(phi):
        vals[m], rev[m], mask[m], exc[m] = _sinogram_row(
            scene, op, options, disc, p, s, amplitude, eps, delta_xi, jump_floor
        )
        if progress is not None:
            progress(m + 1, n_phi)
    log.info("sinogram: %d of %d entries masked", int(mask.sum()), mask.size)
    return Sinogram(phi, s, vals, mask, R, rev, exc)


# -- filtered back projection -------------------------------------------------


@dataclass
class ReconImage:
    values: np.ndarray
    mask: np.ndarray
    radius: float

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def coords(self) -> np.ndarray:
        return pixel_centers(self.n, self.radius)

    def to_csv(self, path) -> None:
        c = self.coords
        lines = ["row,col,x,y,value,masked"]
        for i in range(self.n):
            for j in range(self.n):
                lines.append(f"{i},{j},{c[j]:.17g},{c[i]:.17g},{self.values[i, j]:.17g},{int(self.mask[i, j])}")
        Path(path).write_text("\n".join(lines) + "\n")

    def to_pgm(self, path) -> None:
        """16-bit binary PGM, values mapped linearly from [0, max] to [0, 65535]."""
        v = np.where(self.mask, 0.0, np.clip(self.values, 0.0, None))
        top = v.max()
        scaled = np.zeros(v.shape) if top <= 0 else v / top * 65535.0
        # row 0 of the image is the top (largest y)
        data = np.round(scaled[::-1]).astype(">u2")
        header = f"P5\n{self.n} {self.n}\n65535\n".encode("ascii")
        Path(path).write_bytes(header + data.tobytes())


def pixel_centers(n: int, radius: float) -> np.ndarray:
    return -radius + (np.arange(n) + 0.5) * (2 * radius / n)


def ramp_kernel(n: int, tau: float) -> np.ndarray:
    """Band-limited ramp kernel sampled at ``k tau`` for ``k = -(n-1)..n-1``."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(len(k))
    h[k == 0] = 1.0 / (4 * tau * tau)
    odd = (k % 2) != 0
    h[odd] = -1.0 / (np.pi**2 * tau * tau * k[odd] ** 2)
    return h


def ramp_filter(proj: np.ndarray, tau: float, window: str = "ramlak") -> np.ndarray:
    """Filter each row of ``proj`` (angles x offsets) with the ramp kernel."""
    n = proj.shape[-1]
    h = ramp_kernel(n, tau)
    size = 1 << int(math.ceil(math.log2(2 * n - 1 + n)))
    H = np.fft.rfft(h, size)
    if window == "cosine":
        f = np.fft.rfftfreq(size)
        H = H * np.cos(np.pi * f)
    elif window != "ramlak":
        raise ValueError(f"unknown filter {window!r}")
    P = np.fft.rfft(proj, size, axis=-1)
    full = np.fft.irfft(P * H, size, axis=-1)
    # linear convolution: output index l sits at l + (n - 1)
    return tau * full[..., n - 1 : 2 * n - 1]


def fill_masked(sino: Sinogram) -> tuple[np.ndarray, np.ndarray]:
    """Values with masked entries interpolated in s; returns ``(values, kept angles)``.

    Angles masked over their whole width (exceptional directions) are
    dropped.  Any other angle may have at most 5% of its entries masked.
    """
    vals = np.array(sino.values, dtype=float)
    mask = np.array(sino.mask, dtype=bool) | ~np.isfinite(vals)
    keep = np.ones(len(sino.angles), dtype=bool)
    s = sino.offsets
    for m in range(len(sino.angles)):
        bad = mask[m]
        if bad.all():
            keep[m] = False
            continue
        if bad.mean() > MAX_MASKED_FRACTION:
            raise ReconstructionError(
                f"angle {m}: {bad.mean():.1%} of entries masked (limit {MAX_MASKED_FRACTION:.0%})"
            )
        if bad.any():
            vals[m, bad] = np.interp(s[bad], s[~bad], vals[m, ~bad])
    if keep.sum() < 2:
        raise ReconstructionError("fewer than two usable angles")
    return vals, keep


def fbp_reconstruct(sino: Sinogram, n_pixels: int = 256, filter: str = "ramlak") -> ReconImage:
    """Ram-Lak filtered back projection onto an ``n x n`` pixel grid."""
    if len(sino.angles) < 2:
        raise ReconstructionError("need at least two angles")
    vals, keep = fill_masked(sino)
    s = sino.offsets
    tau = float(s[1] - s[0]) if len(s) > 1 else 2 * sino.radius
    q = ramp_filter(vals[keep], tau, filter)
    angles = sino.angles[keep]

    c = pixel_centers(n_pixels, sino.radius)
    X, Y = np.meshgrid(c, c)
    img = np.zeros_like(X)
    for phi, row in zip(angles, q):
        t = X * math.cos(phi) + Y * math.sin(phi)
        img += np.interp(t, s, row, left=0.0, right=0.0)
    img *= np.pi / len(angles)
    mask = X**2 + Y**2 > sino.radius**2
    img[mask] = 0.0
    return ReconImage(img, mask, sino.radius)


@dataclass(frozen=True)
class RegionMean:
    piece_id: int
    expected: float
    mean: float
    n_pixels: int

    @property
    def rel_error(self) -> float:
        return abs(self.mean - self.expected) / abs(self.expected)


def true_image(scene: Scene, n_pixels: int) -> np.ndarray:
    """``mu_t`` sampled at the pixel centres (zero outside the disk)."""
    c = pixel_centers(n_pixels, scene.domain.radius)
    X, Y = np.meshgrid(c, c)
    _, _, mu_t = scene.mu_fields(np.stack([X.ravel(), Y.ravel()], axis=1))
    return mu_t.reshape(X.shape)


def region_means(image: ReconImage, scene: Scene, margin: float = 2.0,
                 n_ring: int = 32) -> list[RegionMean]:
    """Mean of each piece over pixels at least ``margin`` pixels inside it.

    A pixel counts as inside when its centre and a ring of points at
    distance ``margin`` pixel widths around it all fall in the same piece.
    """
    n = image.n
    R = image.radius
    c = pixel_centers(n, R)
    X, Y = np.meshgrid(c, c)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = scene.locate(pts)
    same = idx >= 0
    rad = margin * 2 * R / n
    for a in np.linspace(0.0, 2 * np.pi, n_ring, endpoint=False):
        ring = pts + rad * np.array([math.cos(a), math.sin(a)])
        same &= scene.locate(ring) == idx
    same &= np.hypot(pts[:, 0], pts[:, 1]) <= R - rad
    vals = image.values.ravel()
    out = []
    for k, piece in enumerate(scene.pieces):
        sel = same & (idx == k)
        mean = float(vals[sel].mean()) if sel.any() else float("nan")
        out.append(RegionMean(piece.id, scene.coefficients.mu_t[k], mean, int(sel.sum())))
    return out


def relative_l2(image: ReconImage, scene: Scene) -> float:
    """Relative L2 error of the image against ``mu_t`` over the unmasked disk."""
    truth = true_image(scene, image.n)
    keep = ~image.mask
    return float(np.linalg.norm((image.values - truth)[keep]) / np.linalg.norm(truth[keep]))


# -- 3D ball to 2D slice ------------------------------------------------------


def slice_reduce(ball: BallScene, x0: float) -> Scene:
    """Cross-section ``{x_3 = x0}`` of a ball scene, directions restricted to the plane.

    Balls slice to disks and shells to annuli (or disks when the cut misses
    the inner sphere).  Pieces the plane misses are dropped.  The phase
    function keeps its Henyey-Greenstein parameter in its planar form.
    """
    R = ball.radius
    if not abs(x0) < R:
        raise DomainError(f"slice x3 = {x0} misses the ball of radius {R}")
    pieces, mu_a, mu_s = [], [], []
    for piece, a, s in zip(ball.pieces, ball.coefficients.mu_a, ball.coefficients.mu_s):
        shape = piece.shape
        if isinstance(shape, Background):
            cut = Background()
        else:
            cx, cy, cz = shape.center
            dz2 = (x0 - cz) ** 2
            if isinstance(shape, Ball):
                if shape.r**2 - dz2 <= 0:
                    continue
                cut = Circle((cx, cy), math.sqrt(shape.r**2 - dz2))
            elif isinstance(shape, Shell):
                if shape.r_out**2 - dz2 <= 0:
                    continue
                r_out = math.sqrt(shape.r_out**2 - dz2)
                if shape.r_in**2 - dz2 <= 0:
                    cut = Circle((cx, cy), r_out)
                else:
                    cut = Annulus((cx, cy), math.sqrt(shape.r_in**2 - dz2), r_out)
            else:
                raise TypeError(f"unsupported 3D shape {shape!r}")
        pieces.append(Piece(piece.id, cut))
        mu_a.append(a)
        mu_s.append(s)
    phase = PhaseFunction(ball.phase.kind, ball.phase.g, 2)
    domain = ConvexDomain("unit-ball-slice", math.sqrt(R * R - x0 * x0))
    return Scene(domain, tuple(pieces), Coefficients(tuple(mu_a), tuple(mu_s)), phase)
