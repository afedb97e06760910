"""Flat array encoding of a scene for the ray-march kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Annulus, Background, Circle, Polygon

KIND_BACKGROUND, KIND_CIRCLE, KIND_ANNULUS, KIND_POLYGON = 0, 1, 2, 3


@dataclass(frozen=True)
class SceneTables:
    radius: float
    kinds: np.ndarray      # (np,) int32
    par: np.ndarray        # (np, 4) cx, cy, r1^2, r2^2
    poly_ptr: np.ndarray   # (np + 1,) int32 offsets into poly_xy
    poly_xy: np.ndarray    # (nv, 2)
    mu_t: np.ndarray
    mu_s: np.ndarray
    circles: np.ndarray    # (nc, 3) cx, cy, r of every interface circle
    segments: np.ndarray   # (ns, 4) x0, y0, x1, y1 of every polygon edge

    @property
    def n_pieces(self) -> int:
        return len(self.kinds)

    @property
    def capacity(self) -> int:
        """Upper bound on breakpoints along one ray."""
        return 4 + 2 * len(self.circles) + len(self.segments)


def pack_scene(scene) -> SceneTables:
    n = len(scene.pieces)
    kinds = np.zeros(n, dtype=np.int32)
    par = np.zeros((n, 4))
    ptr = [0]
    verts: list = []
    circles: list = []
    segments: list = []
    for i, piece in enumerate(scene.pieces):
        s = piece.shape
        if isinstance(s, Background):
            kinds[i] = KIND_BACKGROUND
        elif isinstance(s, Circle):
            kinds[i] = KIND_CIRCLE
            par[i] = (s.center[0], s.center[1], s.r**2, 0.0)
        elif isinstance(s, Annulus):
            kinds[i] = KIND_ANNULUS
            par[i] = (s.center[0], s.center[1], s.r_in**2, s.r_out**2)
        elif isinstance(s, Polygon):
            kinds[i] = KIND_POLYGON
            verts.extend(s.vertices)
        else:
            raise TypeError(f"unsupported shape {s!r}")
        ptr.append(len(verts))
        circles.extend(s.circles())
        segments.extend((a[0], a[1], b[0], b[1]) for a, b in s.edges())
    c = scene.coefficients
    return SceneTables(
        radius=float(scene.domain.radius),
        kinds=kinds,
        par=par,
        poly_ptr=np.asarray(ptr, dtype=np.int32),
        poly_xy=np.asarray(verts, dtype=float).reshape(-1, 2),
        mu_t=np.asarray(c.mu_t, dtype=float),
        mu_s=np.asarray(c.mu_s, dtype=float),
        circles=np.asarray(circles, dtype=float).reshape(-1, 3),
        segments=np.asarray(segments, dtype=float).reshape(-1, 4),
    )


@dataclass(frozen=True)
class GridSpec:
    """Node lattice ``x0 + i*dx`` (same in y), ``i = 0..n-1``."""

    x0: float
    dx: float
    n: int
