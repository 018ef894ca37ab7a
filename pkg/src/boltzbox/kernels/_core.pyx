# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled collision-quadrature core.

Same semantics as `_core_py` (the numpy fallback); see that module's
docstring for the shared conventions.  The pair loop (i <= j) visits each
unordered node pair once and scatters the common bracket into both output
rows, which halves the quadrature work.
"""

from libc.math cimport exp, pow, sqrt, floor, rint
from libc.stdlib cimport malloc, free

import numpy as np

cdef double INV_2PI_32 = (2.0 * 3.14159265358979323846) ** -1.5


cdef inline double _ramp01(double u) noexcept nogil:
    cdef double g, g1
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    g = exp(-1.0 / u)
    g1 = exp(-1.0 / (1.0 - u))
    return g / (g + g1)


cdef inline double _ramp_up(double z, double a, double b) noexcept nogil:
    return _ramp01((z - a) / (b - a))


cdef inline double _ramp_down(double z, double a, double b) noexcept nogil:
    return 1.0 - _ramp01((z - a) / (b - a))


def ramp01(u):
    """Python binding of the smooth 0->1 ramp (for backend-equality tests)."""
    arr = np.atleast_1d(np.asarray(u, float))
    out = np.empty_like(arr)
    cdef double[::1] a = arr.ravel()
    cdef double[::1] o = out.ravel()
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        o[i] = _ramp01(a[i])
    return out if np.ndim(u) else float(out.ravel()[0])


cdef inline double _mu1(double x, double y, double z) noexcept nogil:
    return INV_2PI_32 * exp(-0.5 * (x * x + y * y + z * z))


cdef inline void _frame(double ex, double ey, double ez,
                        double* u, double* w) noexcept nogil:
    """Deterministic orthonormal completion of unit vector e (see _core_py)."""
    cdef double ax = ex if ex >= 0 else -ex
    cdef double ay = ey if ey >= 0 else -ey
    cdef double az = ez if ez >= 0 else -ez
    cdef double tx = 0.0, ty = 0.0, tz = 0.0, d, nrm
    if ax <= ay and ax <= az:
        tx = 1.0
    elif ay <= az:
        ty = 1.0
    else:
        tz = 1.0
    d = tx * ex + ty * ey + tz * ez
    u[0] = tx - d * ex
    u[1] = ty - d * ey
    u[2] = tz - d * ez
    nrm = sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
    u[0] /= nrm
    u[1] /= nrm
    u[2] /= nrm
    w[0] = ey * u[2] - ez * u[1]
    w[1] = ez * u[0] - ex * u[2]
    w[2] = ex * u[1] - ey * u[0]


cdef inline int _stencil_pt(double axis0, double h, int n, int order, double band,
                            double ux, double uy, double uz,
                            long* cols, double* wts) noexcept nogil:
    """Clamped Lagrange stencil at one point; returns 0 if beyond the band."""
    cdef double t[3]
    cdef double wax[3][3]
    cdef long base[3]
    cdef int d, k, a, b, c, m
    cdef double x
    t[0] = (ux - axis0) / h
    t[1] = (uy - axis0) / h
    t[2] = (uz - axis0) / h
    for d in range(3):
        if not (t[d] >= -0.5 - band and t[d] <= n - 0.5 + band):
            return 0
    if order == 1:
        k = 2
        for d in range(3):
            m = <int>floor(t[d])
            if m < 0:
                m = 0
            elif m > n - 2:
                m = n - 2
            x = t[d] - m
            base[d] = m
            wax[d][0] = 1.0 - x
            wax[d][1] = x
    else:
        k = 3
        for d in range(3):
            # round-half-to-even, matching np.rint in the fallback core: the
            # midpoint lattice puts post-collision points exactly on cell
            # boundaries whenever they hit a symmetry plane, and the two
            # cores must centre the quadratic stencil identically there
            # (floor(t + 0.5) would also double-round near 0.5 - ulp).
            m = <int>rint(t[d])
            if m < 1:
                m = 1
            elif m > n - 2:
                m = n - 2
            x = t[d] - m
            base[d] = m - 1
            wax[d][0] = 0.5 * x * (x - 1.0)
            wax[d][1] = (1.0 - x) * (1.0 + x)
            wax[d][2] = 0.5 * x * (x + 1.0)
    m = 0
    for a in range(k):
        for b in range(k):
            for c in range(k):
                cols[m] = ((base[0] + a) * n + base[1] + b) * n + base[2] + c
                wts[m] = wax[0][a] * wax[1][b] * wax[2][c]
                m += 1
    return m  # number of stencil entries


def build_matrices(double[::1] axis, double h, int order, double ext,
                   double[:, ::1] nodes, double[::1] mu,
                   double[::1] sig_c, double[::1] sig_s1, double[::1] sig_s2,
                   double[::1] sw, double[::1] bsym,
                   double gamma, double cphi,
                   double[::1] vfac, double[::1] ang,
                   double delta, int mode,
                   double[:, ::1] K_out, double[:, ::1] A_out):
    """See _core_py.build_matrices."""
    cdef int n = axis.shape[0]
    cdef Py_ssize_t N = nodes.shape[0]
    cdef int S = sig_c.shape[0]
    cdef double h3 = h * h * h
    cdef double band = ext / h
    cdef double axis0 = axis[0]
    cdef int want_K = 1 if mode == 0 or mode == 1 else 0
    cdef int want_A = 1 if mode == 1 or mode == 2 else 0
    cdef double trunc = 0.0

    cdef long cp[27]
    cdef long cs[27]
    cdef double wp[27]
    cdef double ws[27]
    cdef double u[3]
    cdef double w[3]
    cdef Py_ssize_t i, j, jstart
    cdef int k, s, okp, oks, nst
    cdef double vix, viy, viz, vjx, vjy, vjz
    cdef double rx, ry, rz, dn, ex, ey, ez
    cdef double cmx, cmy, cmz, hd, sx, sy, sz
    cdef double vpx, vpy, vpz, vsx, vsy, vsz
    cdef double rg, pref, gm, coef, rad, thi, thj, c1
    cdef double loss_i, loss_j, aloss_i, aloss_j
    cdef double* prefk = <double*> malloc(S * sizeof(double))
    if prefk == NULL:
        raise MemoryError()
    for k in range(S):
        prefk[k] = cphi * bsym[k] * sw[k] * h3

    with nogil:
        for i in range(N):
            vix = nodes[i, 0]; viy = nodes[i, 1]; viz = nodes[i, 2]
            jstart = i if gamma == 0.0 else i + 1
            for j in range(jstart, N):
                vjx = nodes[j, 0]; vjy = nodes[j, 1]; vjz = nodes[j, 2]
                rx = vix - vjx; ry = viy - vjy; rz = viz - vjz
                dn = sqrt(rx * rx + ry * ry + rz * rz)
                if dn == 0.0 and gamma > 0.0:
                    continue
                if dn == 0.0:
                    ex = 1.0; ey = 0.0; ez = 0.0
                else:
                    ex = rx / dn; ey = ry / dn; ez = rz / dn
                _frame(ex, ey, ez, u, w)
                rg = pow(dn, gamma)
                cmx = 0.5 * (vix + vjx); cmy = 0.5 * (viy + vjy); cmz = 0.5 * (viz + vjz)
                hd = 0.5 * dn
                if want_A:
                    rad = _ramp_up(dn, delta, 2.0 * delta) \
                        * _ramp_down(dn, 1.0 / delta, 2.0 / delta)
                loss_i = 0.0; loss_j = 0.0; aloss_i = 0.0; aloss_j = 0.0
                for k in range(S):
                    pref = prefk[k] * rg
                    sx = sig_c[k] * ex + sig_s1[k] * u[0] + sig_s2[k] * w[0]
                    sy = sig_c[k] * ey + sig_s1[k] * u[1] + sig_s2[k] * w[1]
                    sz = sig_c[k] * ez + sig_s1[k] * u[2] + sig_s2[k] * w[2]
                    vpx = cmx + hd * sx; vpy = cmy + hd * sy; vpz = cmz + hd * sz
                    vsx = cmx - hd * sx; vsy = cmy - hd * sy; vsz = cmz - hd * sz
                    gm = _mu1(vpx, vpy, vpz) * _mu1(vsx, vsy, vsz)
                    coef = pref * gm
                    okp = _stencil_pt(axis0, h, n, order, band, vpx, vpy, vpz, cp, wp)
                    oks = _stencil_pt(axis0, h, n, order, band, vsx, vsy, vsz, cs, ws)
                    if want_A:
                        thi = vfac[i] * rad * ang[k]
                        thj = vfac[j] * rad * ang[k]
                        aloss_i += pref * thi
                        aloss_j += pref * thj
                    loss_i += pref
                    loss_j += pref
                    nst = okp
                    if nst:
                        for s in range(nst):
                            c1 = coef * wp[s] / mu[cp[s]]
                            if want_K:
                                K_out[i, cp[s]] += c1
                                if j != i:
                                    K_out[j, cp[s]] += c1
                            if want_A:
                                A_out[i, cp[s]] += thi * c1
                                if j != i:
                                    A_out[j, cp[s]] += thj * c1
                    else:
                        trunc += coef
                    nst = oks
                    if nst:
                        for s in range(nst):
                            c1 = coef * ws[s] / mu[cs[s]]
                            if want_K:
                                K_out[i, cs[s]] += c1
                                if j != i:
                                    K_out[j, cs[s]] += c1
                            if want_A:
                                A_out[i, cs[s]] += thi * c1
                                if j != i:
                                    A_out[j, cs[s]] += thj * c1
                    else:
                        trunc += coef
                if want_K:
                    K_out[i, j] -= loss_i * mu[i]
                    if j != i:
                        K_out[j, i] -= loss_j * mu[j]
                if want_A:
                    A_out[i, j] -= aloss_i * mu[i]
                    if j != i:
                        A_out[j, i] -= aloss_j * mu[j]
    free(prefk)
    return trunc


def q_gain(double[::1] axis, double h, int order, double ext,
           double[:, ::1] nodes, double[::1] mu,
           double[::1] sig_c, double[::1] sig_s1, double[::1] sig_s2,
           double[::1] sw, double[::1] bsym,
           double gamma, double cphi,
           double[:, ::1] RFT, double[:, ::1] RGT, int same,
           double[:, ::1] GT):
    """See _core_py.q_gain.  RFT/RGT/GT have shape (N, X)."""
    cdef int n = axis.shape[0]
    cdef Py_ssize_t N = nodes.shape[0]
    cdef int S = sig_c.shape[0]
    cdef Py_ssize_t X = RFT.shape[1]
    cdef double h3 = h * h * h
    cdef double band = ext / h
    cdef double axis0 = axis[0]
    cdef double trunc = 0.0

    cdef long cp[27]
    cdef long cs[27]
    cdef double wp[27]
    cdef double ws[27]
    cdef double u[3]
    cdef double w[3]
    cdef Py_ssize_t i, j, jstart, x, base
    cdef int k, s, okp, oks
    cdef double vix, viy, viz, vjx, vjy, vjz
    cdef double rx, ry, rz, dn, ex, ey, ez
    cdef double cmx, cmy, cmz, hd, sx, sy, sz
    cdef double vpx, vpy, vpz, vsx, vsy, vsz
    cdef double pref, gm, coef, wv, br
    cdef double* prefk = <double*> malloc(S * sizeof(double))
    cdef double* rfp = <double*> malloc(4 * X * sizeof(double))
    if prefk == NULL or rfp == NULL:
        if prefk != NULL:
            free(prefk)
        if rfp != NULL:
            free(rfp)
        raise MemoryError()
    cdef double* rfs = rfp + X
    cdef double* rgp = rfp + 2 * X
    cdef double* rgs = rfp + 3 * X
    cdef double* rft = &RFT[0, 0]
    cdef double* rgt = &RGT[0, 0]
    cdef double* gt = &GT[0, 0]
    for k in range(S):
        prefk[k] = cphi * bsym[k] * sw[k] * h3

    with nogil:
        for i in range(N):
            vix = nodes[i, 0]; viy = nodes[i, 1]; viz = nodes[i, 2]
            jstart = i if gamma == 0.0 else i + 1
            for j in range(jstart, N):
                vjx = nodes[j, 0]; vjy = nodes[j, 1]; vjz = nodes[j, 2]
                rx = vix - vjx; ry = viy - vjy; rz = viz - vjz
                dn = sqrt(rx * rx + ry * ry + rz * rz)
                if dn == 0.0 and gamma > 0.0:
                    continue
                if dn == 0.0:
                    ex = 1.0; ey = 0.0; ez = 0.0
                else:
                    ex = rx / dn; ey = ry / dn; ez = rz / dn
                _frame(ex, ey, ez, u, w)
                cmx = 0.5 * (vix + vjx); cmy = 0.5 * (viy + vjy); cmz = 0.5 * (viz + vjz)
                hd = 0.5 * dn
                for k in range(S):
                    pref = prefk[k] * pow(dn, gamma)
                    sx = sig_c[k] * ex + sig_s1[k] * u[0] + sig_s2[k] * w[0]
                    sy = sig_c[k] * ey + sig_s1[k] * u[1] + sig_s2[k] * w[1]
                    sz = sig_c[k] * ez + sig_s1[k] * u[2] + sig_s2[k] * w[2]
                    vpx = cmx + hd * sx; vpy = cmy + hd * sy; vpz = cmz + hd * sz
                    vsx = cmx - hd * sx; vsy = cmy - hd * sy; vsz = cmz - hd * sz
                    gm = _mu1(vpx, vpy, vpz) * _mu1(vsx, vsy, vsz)
                    okp = _stencil_pt(axis0, h, n, order, band, vpx, vpy, vpz, cp, wp)
                    oks = _stencil_pt(axis0, h, n, order, band, vsx, vsy, vsz, cs, ws)
                    if not (okp and oks):
                        trunc += pref * gm
                        continue
                    coef = pref * gm
                    for x in range(X):
                        rfp[x] = 0.0
                        rfs[x] = 0.0
                    for s in range(okp):
                        wv = wp[s]
                        base = cp[s] * X
                        for x in range(X):
                            rfp[x] += wv * rft[base + x]
                    for s in range(oks):
                        wv = ws[s]
                        base = cs[s] * X
                        for x in range(X):
                            rfs[x] += wv * rft[base + x]
                    if same:
                        for x in range(X):
                            br = coef * 2.0 * rfp[x] * rfs[x]
                            gt[i * X + x] += br
                        if j != i:
                            for x in range(X):
                                gt[j * X + x] += coef * 2.0 * rfp[x] * rfs[x]
                    else:
                        for x in range(X):
                            rgp[x] = 0.0
                            rgs[x] = 0.0
                        for s in range(okp):
                            wv = wp[s]
                            base = cp[s] * X
                            for x in range(X):
                                rgp[x] += wv * rgt[base + x]
                        for s in range(oks):
                            wv = ws[s]
                            base = cs[s] * X
                            for x in range(X):
                                rgs[x] += wv * rgt[base + x]
                        for x in range(X):
                            br = coef * (rfp[x] * rgs[x] + rgp[x] * rfs[x])
                            gt[i * X + x] += br
                        if j != i:
                            for x in range(X):
                                gt[j * X + x] += coef * (rfp[x] * rgs[x] + rgp[x] * rfs[x])
    free(prefk)
    free(rfp)
    return trunc
