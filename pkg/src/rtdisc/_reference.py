"""Pure numpy ray-march kernels.

Same semantics as the compiled ``_kernels`` module; used when the extension
is unavailable and as its test oracle.
"""

from __future__ import annotations

import numpy as np

from ._tables import (
    KIND_ANNULUS,
    KIND_BACKGROUND,
    KIND_CIRCLE,
    KIND_POLYGON,
    GridSpec,
    SceneTables,
)
from .geometry import TANGENT_TOL

NAME = "numpy"


def locate(tab: SceneTables, p: np.ndarray) -> np.ndarray:
    px, py = p[..., 0], p[..., 1]
    out = np.full(px.shape, -1, dtype=np.int64)
    free = px * px + py * py <= tab.radius**2 * (1 + 1e-12)
    for i in range(tab.n_pieces):
        kind = tab.kinds[i]
        cx, cy, a2, b2 = tab.par[i]
        if kind == KIND_BACKGROUND:
            hit = free.copy()
        elif kind == KIND_CIRCLE:
            d2 = (px - cx) ** 2 + (py - cy) ** 2
            hit = free & (d2 <= a2)
        elif kind == KIND_ANNULUS:
            d2 = (px - cx) ** 2 + (py - cy) ** 2
            hit = free & (d2 >= a2) & (d2 <= b2)
        elif kind == KIND_POLYGON:
            v = tab.poly_xy[tab.poly_ptr[i] : tab.poly_ptr[i + 1]]
            inside = np.zeros(px.shape, dtype=bool)
            for k in range(len(v)):
                x0, y0 = v[k]
                x1, y1 = v[(k + 1) % len(v)]
                straddle = (y0 > py) != (y1 > py)
                with np.errstate(divide="ignore", invalid="ignore"):
                    xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
                inside ^= straddle & (px < xc)
            hit = free & inside
        out[hit] = i
        free &= ~hit
    return out


def decompose(tab: SceneTables, x: np.ndarray, xi: np.ndarray):
    """Breakpoints and piece indices along the backward rays ``x - t xi``.

    Returns ``(breaks, piece, t_end)`` with ``breaks`` of shape ``(n, L+1)``
    running from 0 to ``t_end`` (zero-length padding intervals allowed).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    ux, uy = xi[:, 0], xi[:, 1]
    px, py = x[:, 0], x[:, 1]
    b = px * ux + py * uy
    disc = b * b - (px * px + py * py - tab.radius**2)
    sq = np.sqrt(np.maximum(disc, 0.0))
    t1, t2 = b - sq, b + sq
    valid = (disc > TANGENT_TOL) & (t2 > 0)
    t_end = np.where(valid, t2, 0.0)

    cands = [np.where(valid & (t1 > 0), t1, np.inf)]
    for cx, cy, r in tab.circles:
        dx, dy = px - cx, py - cy
        bc = dx * ux + dy * uy
        dc = bc * bc - (dx * dx + dy * dy - r * r)
        ok = dc > TANGENT_TOL
        s = np.sqrt(np.where(ok, dc, 0.0))
        for root in (bc - s, bc + s):
            cands.append(np.where(ok & (root > 0) & (root < t_end), root, np.inf))
    for x0, y0, x1, y1 in tab.segments:
        ex, ey = x1 - x0, y1 - y0
        rx, ry = px - x0, py - y0
        det = ux * ey - uy * ex
        ok = np.abs(det) >= 1e-15
        safe = np.where(ok, det, 1.0)
        t = (rx * ey - ry * ex) / safe
        u = (ux * ry - uy * rx) / safe
        keep = ok & (u >= -1e-12) & (u <= 1 + 1e-12) & (t > 0) & (t < t_end)
        cands.append(np.where(keep, t, np.inf))

    c = np.sort(np.stack(cands, axis=1), axis=1)
    c = np.where(np.isinf(c), t_end[:, None], c)
    breaks = np.concatenate([np.zeros((len(x), 1)), c, t_end[:, None]], axis=1)
    mids = 0.5 * (breaks[:, :-1] + breaks[:, 1:])
    pts = x[:, None, :] - mids[..., None] * xi[:, None, :]
    return breaks, locate(tab, pts), t_end


def optical_depth(tab: SceneTables, x, xi):
    breaks, piece, t_end = decompose(tab, x, xi)
    mut = np.append(tab.mu_t, 0.0)[piece]
    return np.sum(mut * np.diff(breaks, axis=1), axis=1), t_end


def _bilinear(G: np.ndarray, n: int, gidx: np.ndarray, fx, fy):
    """Bilinear sample at fractional node coordinates, clamped to the lattice."""
    fx = np.clip(fx, 0.0, n - 1)
    fy = np.clip(fy, 0.0, n - 1)
    ix = np.minimum(fx.astype(np.int64), n - 2)
    iy = np.minimum(fy.astype(np.int64), n - 2)
    tx = fx - ix
    ty = fy - iy
    flat = G.reshape(G.shape[0], -1)
    base = iy * n + ix
    return (
        (1 - tx) * (1 - ty) * flat[gidx, base]
        + tx * (1 - ty) * flat[gidx, base + 1]
        + (1 - tx) * ty * flat[gidx, base + n]
        + tx * ty * flat[gidx, base + n + 1]
    )


def march(tab: SceneTables, G, grid: GridSpec, gidx, x, xi, h: float) -> np.ndarray:
    """``int_0^tau mu_s exp(-M_t) G(x - s xi) ds`` per ray, G from grid ``gidx``.

    Steps of length ``h``; G is sampled at each step midpoint and the
    attenuated scattering weight is integrated exactly over the pieces the
    step crosses.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    gidx = np.asarray(gidx, dtype=np.int64)
    breaks, piece, t_end = decompose(tab, x, xi)
    mut = np.append(tab.mu_t, 0.0)[piece]
    mus = np.append(tab.mu_s, 0.0)[piece]
    lo_b, hi_b = breaks[:, :-1], breaks[:, 1:]
    mstart = np.concatenate([np.zeros((len(x), 1)), np.cumsum(mut * (hi_b - lo_b), axis=1)[:, :-1]], axis=1)

    inv = 1.0 / grid.dx
    f0 = (x - grid.x0) * inv
    sxy = xi * inv
    out = np.zeros(len(x))
    steps = int(np.ceil(t_end.max() / h)) if len(x) else 0
    for m in range(steps):
        a = m * h
        rows = np.nonzero(a < t_end)[0]
        if rows.size == 0:
            break
        b = np.minimum(a + h, t_end[rows])
        lb, hb = lo_b[rows], hi_b[rows]
        lo = np.clip(a, lb, hb)
        hi = np.clip(b[:, None], lb, hb)
        d = hi - lo
        mu = mut[rows]
        att = np.exp(-(mstart[rows] + mu * (lo - lb)))
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(mu > 0, -np.expm1(-mu * d) / mu, d)
        w = np.sum(mus[rows] * att * f, axis=1)
        s = 0.5 * (a + b)
        val = _bilinear(G, grid.n, gidx[rows], f0[rows, 0] - s * sxy[rows, 0], f0[rows, 1] - s * sxy[rows, 1])
        out[rows] += w * val
    return out


def sweep(tab: SceneTables, G, grid: GridSpec, dirs, node_ix, node_iy, h: float, out=None):
    """Apply :func:`march` from every active node in every grid direction.

    ``G`` and ``out`` have shape ``(K, n, n)``; ``dirs`` has shape ``(K, 2)``.
    """
    K = len(dirs)
    if out is None:
        out = np.zeros_like(G)
    xs = grid.x0 + node_ix * grid.dx
    ys = grid.x0 + node_iy * grid.dx
    pts = np.stack([xs, ys], axis=1)
    chunk = 8192
    for k in range(K):
        for s in range(0, len(pts), chunk):
            p = pts[s : s + chunk]
            xi = np.broadcast_to(dirs[k], p.shape)
            out[k, node_iy[s : s + chunk], node_ix[s : s + chunk]] = march(
                tab, G, grid, np.full(len(p), k), p, xi, h
            )
    return out
