# cython: language_level=3
"""Compiled ray-march kernels; semantics mirror ``_reference``."""

import numpy as np
cimport cython
from cython.parallel cimport parallel, prange
from libc.math cimport ceil, exp, expm1, fabs, floor, sqrt
from libc.stdlib cimport free, malloc

NAME = "cython"

cdef double TANGENT_TOL = 1e-12


cdef struct Tables:
    double R
    int npieces
    const int* kinds
    const double* par
    const int* poly_ptr
    const double* poly_xy
    const double* mu_t
    const double* mu_s
    const double* E
    const double* F
    int ncirc
    const double* circ
    int nseg
    const double* seg


cdef struct Grid:
    double x0
    double dx
    int n


cdef class _Packed:
    """Keeps contiguous copies alive while the kernels hold raw pointers."""
    cdef Tables t
    cdef int capacity
    cdef object refs

    def __init__(self, tab, double h):
        kinds = np.ascontiguousarray(tab.kinds, dtype=np.int32)
        par = np.ascontiguousarray(tab.par, dtype=np.float64).ravel()
        ptr = np.ascontiguousarray(tab.poly_ptr, dtype=np.int32)
        pxy = _nonempty(tab.poly_xy)
        mut = np.ascontiguousarray(tab.mu_t, dtype=np.float64)
        mus = np.ascontiguousarray(tab.mu_s, dtype=np.float64)
        E = np.exp(-mut * h)
        with np.errstate(divide="ignore", invalid="ignore"):
            F = np.where(mut > 0, -np.expm1(-mut * h) / mut, h)
        E = np.ascontiguousarray(E)
        F = np.ascontiguousarray(F)
        circ = _nonempty(tab.circles)
        seg = _nonempty(tab.segments)
        self.refs = (kinds, par, ptr, pxy, mut, mus, E, F, circ, seg)
        self.capacity = int(tab.capacity)

        cdef const int[::1] vk = kinds
        cdef const double[::1] vpar = par
        cdef const int[::1] vptr = ptr
        cdef const double[::1] vpxy = pxy
        cdef const double[::1] vmut = mut
        cdef const double[::1] vmus = mus
        cdef const double[::1] vE = E
        cdef const double[::1] vF = F
        cdef const double[::1] vc = circ
        cdef const double[::1] vs = seg
        self.t.R = tab.radius
        self.t.npieces = len(kinds)
        self.t.kinds = &vk[0]
        self.t.par = &vpar[0]
        self.t.poly_ptr = &vptr[0]
        self.t.poly_xy = &vpxy[0]
        self.t.mu_t = &vmut[0]
        self.t.mu_s = &vmus[0]
        self.t.E = &vE[0]
        self.t.F = &vF[0]
        self.t.ncirc = len(tab.circles)
        self.t.circ = &vc[0]
        self.t.nseg = len(tab.segments)
        self.t.seg = &vs[0]


def _nonempty(a):
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    return a if a.size else np.zeros(1)


cdef inline int locate(const Tables* T, double px, double py) noexcept nogil:
    cdef int i, k, k0, k1, kind, inside
    cdef double d2, x0, y0, x1, y1, xc
    if px * px + py * py > T.R * T.R * (1 + 1e-12):
        return -1
    for i in range(T.npieces):
        kind = T.kinds[i]
        if kind == 0:
            return i
        if kind == 1 or kind == 2:
            d2 = (px - T.par[4 * i]) * (px - T.par[4 * i]) + (py - T.par[4 * i + 1]) * (py - T.par[4 * i + 1])
            if kind == 1 and d2 <= T.par[4 * i + 2]:
                return i
            if kind == 2 and d2 >= T.par[4 * i + 2] and d2 <= T.par[4 * i + 3]:
                return i
        elif kind == 3:
            k0 = T.poly_ptr[i]
            k1 = T.poly_ptr[i + 1]
            inside = 0
            for k in range(k0, k1):
                x0 = T.poly_xy[2 * k]
                y0 = T.poly_xy[2 * k + 1]
                if k + 1 < k1:
                    x1 = T.poly_xy[2 * k + 2]
                    y1 = T.poly_xy[2 * k + 3]
                else:
                    x1 = T.poly_xy[2 * k0]
                    y1 = T.poly_xy[2 * k0 + 1]
                if (y0 > py) != (y1 > py):
                    xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
                    if px < xc:
                        inside = 1 - inside
            if inside:
                return i
    return -1


cdef int decompose(const Tables* T, double px, double py, double ux, double uy,
                   double* B, int* P) noexcept nogil:
    """Fill breaks ``B[0..L]`` and pieces ``P[0..L-1]``; return L (0 on a miss)."""
    cdef double b, disc, sq, t1, t2, dx, dy, bc, dc, s, r, ex, ey, rx, ry, det, t, u, tmp, mid
    cdef int n = 0
    cdef int i, j
    b = px * ux + py * uy
    disc = b * b - (px * px + py * py - T.R * T.R)
    if disc <= TANGENT_TOL:
        return 0
    sq = sqrt(disc)
    t1 = b - sq
    t2 = b + sq
    if t2 <= 0:
        return 0
    if t1 > 0:
        n += 1
        B[n] = t1
    for i in range(T.ncirc):
        dx = px - T.circ[3 * i]
        dy = py - T.circ[3 * i + 1]
        r = T.circ[3 * i + 2]
        bc = dx * ux + dy * uy
        dc = bc * bc - (dx * dx + dy * dy - r * r)
        if dc > TANGENT_TOL:
            s = sqrt(dc)
            if bc - s > 0 and bc - s < t2:
                n += 1
                B[n] = bc - s
            if bc + s > 0 and bc + s < t2:
                n += 1
                B[n] = bc + s
    for i in range(T.nseg):
        ex = T.seg[4 * i + 2] - T.seg[4 * i]
        ey = T.seg[4 * i + 3] - T.seg[4 * i + 1]
        rx = px - T.seg[4 * i]
        ry = py - T.seg[4 * i + 1]
        det = ux * ey - uy * ex
        if fabs(det) >= 1e-15:
            t = (rx * ey - ry * ex) / det
            u = (ux * ry - uy * rx) / det
            if u >= -1e-12 and u <= 1 + 1e-12 and t > 0 and t < t2:
                n += 1
                B[n] = t
    # insertion sort of B[1..n]
    for i in range(2, n + 1):
        tmp = B[i]
        j = i - 1
        while j >= 1 and B[j] > tmp:
            B[j + 1] = B[j]
            j -= 1
        B[j + 1] = tmp
    B[0] = 0.0
    B[n + 1] = t2
    for i in range(n + 1):
        mid = 0.5 * (B[i] + B[i + 1])
        P[i] = locate(T, px - mid * ux, py - mid * uy)
    return n + 1


cdef inline double bilinear(const double* G, int n, double fx, double fy) noexcept nogil:
    """Bilinear sample at fractional node coordinates, clamped to the lattice."""
    cdef int ix, iy, base
    cdef double tx, ty
    if fx < 0:
        fx = 0
    elif fx > n - 1:
        fx = n - 1
    if fy < 0:
        fy = 0
    elif fy > n - 1:
        fy = n - 1
    ix = <int>fx
    iy = <int>fy
    if ix > n - 2:
        ix = n - 2
    if iy > n - 2:
        iy = n - 2
    tx = fx - ix
    ty = fy - iy
    base = iy * n + ix
    return ((1 - tx) * (1 - ty) * G[base] + tx * (1 - ty) * G[base + 1]
            + (1 - tx) * ty * G[base + n] + tx * ty * G[base + n + 1])


cdef inline double weight(double mu, double d) noexcept nogil:
    if mu > 0:
        return -expm1(-mu * d) / mu
    return d


cdef double march_ray(const Tables* T, const Grid* g, const double* G,
                      double px, double py, double ux, double uy, double h,
                      double* B, int* P) noexcept nogil:
    cdef int L = decompose(T, px, py, ux, uy, B, P)
    cdef int nsteps, m, m_end, mm, j, jj, pj, n = g.n
    cdef double t_end, a, b, w, att, Mj, Mjj, lo, hi, mu, s, c, E, acc = 0.0
    cdef double inv, fx0, fy0, sx, sy, q, fx, fy, dfx, dfy
    if L == 0:
        return 0.0
    t_end = B[L]
    nsteps = <int>ceil(t_end / h)
    inv = 1.0 / g.dx
    fx0 = (px - g.x0) * inv
    fy0 = (py - g.x0) * inv
    sx = ux * inv
    sy = uy * inv
    j = 0
    Mj = 0.0
    att = 1.0
    m = 0
    while m < nsteps:
        a = m * h
        if a >= t_end:
            break
        while j < L - 1 and B[j + 1] <= a:
            if P[j] >= 0:
                Mj += T.mu_t[P[j]] * (B[j + 1] - B[j])
            j += 1
        pj = P[j]
        # steps [mm h, (mm+1) h] lying wholly inside interval j
        m_end = <int>floor(B[j + 1] / h)
        if m_end > nsteps:
            m_end = nsteps
        if m_end > m:
            if pj >= 0:
                if T.mu_s[pj] > 0:
                    # carry q = c * att and step the lattice coordinates incrementally
                    q = T.mu_s[pj] * T.F[pj] * att
                    E = T.E[pj]
                    s = (m + 0.5) * h
                    fx = fx0 - s * sx
                    fy = fy0 - s * sy
                    dfx = h * sx
                    dfy = h * sy
                    for mm in range(m, m_end):
                        acc += q * bilinear(G, n, fx, fy)
                        q = q * E
                        fx -= dfx
                        fy -= dfy
                    att = exp(-(Mj + T.mu_t[pj] * (m_end * h - B[j])))
                else:
                    att = exp(-(Mj + T.mu_t[pj] * (m_end * h - B[j])))
            m = m_end
            continue
        # a step that crosses breakpoints or is cut short by the chord end
        b = a + h
        if b > t_end:
            b = t_end
        w = 0.0
        jj = j
        Mjj = Mj
        while True:
            lo = a if a > B[jj] else B[jj]
            hi = b if b < B[jj + 1] else B[jj + 1]
            mu = T.mu_t[P[jj]] if P[jj] >= 0 else 0.0
            if hi > lo and P[jj] >= 0:
                w += T.mu_s[P[jj]] * exp(-(Mjj + mu * (lo - B[jj]))) * weight(mu, hi - lo)
            if B[jj + 1] >= b or jj == L - 1:
                break
            Mjj += mu * (B[jj + 1] - B[jj])
            jj += 1
        att = exp(-(Mjj + mu * (b - B[jj])))
        if w != 0.0:
            s = 0.5 * (a + b)
            acc += w * bilinear(G, n, fx0 - s * sx, fy0 - s * sy)
        m += 1
    return acc


def optical_depth(tab, x, xi):
    cdef _Packed pk = _Packed(tab, 1.0)
    cdef const double[:, ::1] X = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    cdef const double[:, ::1] U = np.ascontiguousarray(np.atleast_2d(xi), dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], i
    cdef int L, j
    depth = np.zeros(n)
    tend = np.zeros(n)
    cdef double[::1] D = depth
    cdef double[::1] TE = tend
    cdef double acc
    cdef double* B = <double*>malloc(pk.capacity * sizeof(double))
    cdef int* P = <int*>malloc(pk.capacity * sizeof(int))
    try:
        with nogil:
            for i in range(n):
                L = decompose(&pk.t, X[i, 0], X[i, 1], U[i, 0], U[i, 1], B, P)
                acc = 0.0
                for j in range(L):
                    if P[j] >= 0:
                        acc = acc + pk.t.mu_t[P[j]] * (B[j + 1] - B[j])
                D[i] = acc
                TE[i] = B[L] if L > 0 else 0.0
    finally:
        free(B)
        free(P)
    return depth, tend


def march(tab, G, grid, gidx, x, xi, double h):
    cdef _Packed pk = _Packed(tab, h)
    cdef const double[:, :, ::1] GG = np.ascontiguousarray(G, dtype=np.float64)
    cdef const long[::1] gi = np.ascontiguousarray(gidx, dtype=np.int64)
    cdef const double[:, ::1] X = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    cdef const double[:, ::1] U = np.ascontiguousarray(np.atleast_2d(xi), dtype=np.float64)
    cdef Grid g
    g.x0 = grid.x0
    g.dx = grid.dx
    g.n = grid.n
    cdef Py_ssize_t n = X.shape[0], i
    out = np.zeros(n)
    cdef double[::1] O = out
    cdef double* B = <double*>malloc(pk.capacity * sizeof(double))
    cdef int* P = <int*>malloc(pk.capacity * sizeof(int))
    try:
        with nogil:
            for i in range(n):
                O[i] = march_ray(&pk.t, &g, &GG[gi[i], 0, 0], X[i, 0], X[i, 1],
                                 U[i, 0], U[i, 1], h, B, P)
    finally:
        free(B)
        free(P)
    return out


def sweep(tab, G, grid, dirs, node_ix, node_iy, double h, out=None):
    cdef _Packed pk = _Packed(tab, h)
    cdef const double[:, :, ::1] GG = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[:, ::1] D = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const long[::1] IX = np.ascontiguousarray(node_ix, dtype=np.int64)
    cdef const long[::1] IY = np.ascontiguousarray(node_iy, dtype=np.int64)
    if out is None:
        out = np.zeros_like(np.asarray(G, dtype=np.float64))
    cdef double[:, :, ::1] O = out
    cdef Grid g
    g.x0 = grid.x0
    g.dx = grid.dx
    g.n = grid.n
    cdef Py_ssize_t K = D.shape[0], m = IX.shape[0], k, i
    cdef int cap = pk.capacity
    cdef double* B
    cdef int* P
    cdef double px, py
    with nogil, parallel():
        B = <double*>malloc(cap * sizeof(double))
        P = <int*>malloc(cap * sizeof(int))
        for k in prange(K, schedule="dynamic"):
            for i in range(m):
                px = g.x0 + IX[i] * g.dx
                py = g.x0 + IY[i] * g.dx
                O[k, IY[i], IX[i]] = march_ray(&pk.t, &g, &GG[k, 0, 0], px, py,
                                               D[k, 0], D[k, 1], h, B, P)
        free(B)
        free(P)
    return out
