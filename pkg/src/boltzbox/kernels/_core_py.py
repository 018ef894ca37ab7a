"""Pure-numpy fallback for the collision quadrature core.

Semantics are identical to the compiled `_core` extension (same pair loop,
same stencil rules, same truncation accounting); only the summation order of
partial contributions may differ at the level of floating-point rounding.

Conventions shared by both backends:

* velocity lattice: axis[a] = axis0 + a*h, nodes flattened C-order
  (i = (ia*n + ib)*n + ic);
* post-collision points v' = cm + 0.5*|r|*sigma, v'* = cm - 0.5*|r|*sigma
  with cm the pair midpoint and r = v_i - v_j;
* the sphere rule is given in the local frame of e = r/|r| as
  sigma = c*e + s1*u + s2*w, where (e, u, w) is the deterministic
  orthonormal frame built by `_frame`;
* fields enter as ratios R = f/mu; interpolation acts on R and the exact
  Maxwellian factor mu(v')mu(v'*) multiplies the result, so the equilibrium
  identity mu'mu'* = mu mu_* transfers to the lattice;
* stencils are clamped Lagrange (order 1: 8-point, order 2: 27-point) and
  extrapolate inside a band of width `ext` beyond the node hull; points
  beyond the band are dropped and their measure weight accumulated in the
  truncation counter.
"""

from __future__ import annotations

import numpy as np

_INV_2PI_32 = (2.0 * np.pi) ** -1.5


def ramp01(u):
    """Smooth monotone 0->1 transition on [0,1], exactly 0/1 outside."""
    u = np.asarray(u, float)
    out = np.empty_like(u)
    lo = u <= 0.0
    hi = u >= 1.0
    mid = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    um = u[mid]
    g = np.exp(-1.0 / um)
    g1 = np.exp(-1.0 / (1.0 - um))
    out[mid] = g / (g + g1)
    return out


def ramp_up(z, a, b):
    return ramp01((np.asarray(z, float) - a) / (b - a))


def ramp_down(z, a, b):
    return 1.0 - ramp_up(z, a, b)


def _mu(v):
    """Standard Maxwellian; v is (..., 3)."""
    return _INV_2PI_32 * np.exp(-0.5 * np.sum(np.asarray(v) ** 2, axis=-1))


def _frame(e):
    """Deterministic orthonormal frame (u, w) completing unit vector e.

    Reference axis = coordinate axis with the smallest |e| component
    (ties resolved toward lower index).
    """
    e = np.asarray(e, float)
    am = int(np.argmin(np.abs(e)))
    t = np.zeros(3)
    t[am] = 1.0
    u = t - (t @ e) * e
    u /= np.linalg.norm(u)
    w = np.cross(e, u)
    return u, w


def _stencil(axis, h, order, ext, U):
    """Clamped Lagrange stencil for points U (P,3).

    Returns (cols (P,K) flat node indices, wts (P,K), valid (P,)).
    Invalid rows (outside the extension band) keep zero weights.
    """
    axis = np.asarray(axis)
    n = axis.shape[0]
    U = np.atleast_2d(np.asarray(U, float))
    t = (U - axis[0]) / h
    band = ext / h
    valid = np.all((t >= -0.5 - band) & (t <= n - 0.5 + band), axis=-1)
    t = np.nan_to_num(t)
    if order == 1:
        i0 = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
        x = t - i0
        wax = np.stack([1.0 - x, x], axis=-1)  # (P,3,2)
        k = 2
    else:
        i0 = np.clip(np.rint(t).astype(np.int64), 1, n - 2) - 1
        x = t - (i0 + 1)
        wax = np.stack(
            [0.5 * x * (x - 1.0), (1.0 - x) * (1.0 + x), 0.5 * x * (x + 1.0)], axis=-1
        )
        k = 3
    d = np.arange(k)
    ia = i0[:, 0:1] + d
    ib = i0[:, 1:2] + d
    ic = i0[:, 2:3] + d
    cols = (
        (ia[:, :, None, None] * n + ib[:, None, :, None]) * n + ic[:, None, None, :]
    ).reshape(U.shape[0], k * k * k)
    wts = (
        wax[:, 0, :, None, None] * wax[:, 1, None, :, None] * wax[:, 2, None, None, :]
    ).reshape(U.shape[0], k * k * k)
    wts = wts * valid[:, None]
    return cols, wts, valid


def _pair_geometry(vi, vj, c, s1, s2):
    """Post-collision points for one pair against the whole sphere rule."""
    r = vi - vj
    dn = float(np.linalg.norm(r))
    if dn == 0.0:
        e = np.array([1.0, 0.0, 0.0])
    else:
        e = r / dn
    u, w = _frame(e)
    sig = c[:, None] * e + s1[:, None] * u + s2[:, None] * w  # (S,3)
    cm = 0.5 * (vi + vj)
    vp = cm + (0.5 * dn) * sig
    vs = cm - (0.5 * dn) * sig
    return dn, vp, vs


def build_matrices(
    axis,
    h,
    order,
    ext,
    nodes,
    mu,
    sig_c,
    sig_s1,
    sig_s2,
    sw,
    bsym,
    gamma,
    cphi,
    vfac,
    ang,
    delta,
    mode,
    K_out,
    A_out,
):
    """Assemble the gain+loss part of the linearized collision operator.

    K_out (mode 0 or 1): matrix of h -> gain(2Q(mu,h)) - mu * conv(h), i.e.
    the bounded part K of L = -nu + K.  A_out (mode 1 or 2): the same sums
    weighted by the smooth cutoff Theta_delta(v, v_*, sigma), where
    Theta = vfac[i] * rad(|r|) * ang[k].  Returns the truncated gain measure.
    """
    n = axis.shape[0]
    N = nodes.shape[0]
    h3 = h**3
    S = sig_c.shape[0]
    trunc = 0.0
    want_K = mode in (0, 1)
    want_A = mode in (1, 2)
    pref_k = cphi * bsym * sw * h3  # (S,)

    for i in range(N):
        vi = nodes[i]
        jstart = i if gamma == 0.0 else i + 1
        for j in range(jstart, N):
            vj = nodes[j]
            dn, vp, vs = _pair_geometry(vi, vj, sig_c, sig_s1, sig_s2)
            if dn == 0.0 and gamma > 0.0:
                continue
            rg = dn**gamma  # 0^0 == 1 handles the gamma=0 diagonal
            pref = pref_k * rg  # (S,)
            gm = _mu(vp) * _mu(vs)  # (S,)
            cp, wp, okp = _stencil(axis, h, order, ext, vp)
            cs, ws, oks = _stencil(axis, h, order, ext, vs)
            if want_A:
                rad = float(
                    ramp_up(dn, delta, 2.0 * delta) * ramp_down(dn, 1.0 / delta, 2.0 / delta)
                )
                th_i = vfac[i] * rad * ang  # (S,)
                th_j = vfac[j] * rad * ang
            # gain: term with h at v'* needs the vs-stencil, term with h at
            # v' needs the vp-stencil; each dropped individually if invalid.
            coef = pref * gm  # (S,)
            trunc += float(coef @ (~okp) + coef @ (~oks))
            # scatter into rows i and j (same bracket, different Theta)
            contrib_p = coef[:, None] * (wp / mu[cp])  # (S,K)
            contrib_s = coef[:, None] * (ws / mu[cs])
            if want_K:
                np.add.at(K_out[i], cp.ravel(), contrib_p.ravel())
                np.add.at(K_out[i], cs.ravel(), contrib_s.ravel())
                K_out[i, j] -= float(pref.sum()) * mu[i]
                if j != i:
                    np.add.at(K_out[j], cp.ravel(), contrib_p.ravel())
                    np.add.at(K_out[j], cs.ravel(), contrib_s.ravel())
                    K_out[j, i] -= float(pref.sum()) * mu[j]
            if want_A:
                np.add.at(A_out[i], cp.ravel(), (th_i[:, None] * contrib_p).ravel())
                np.add.at(A_out[i], cs.ravel(), (th_i[:, None] * contrib_s).ravel())
                A_out[i, j] -= float((pref * th_i).sum()) * mu[i]
                if j != i:
                    np.add.at(A_out[j], cp.ravel(), (th_j[:, None] * contrib_p).ravel())
                    np.add.at(A_out[j], cs.ravel(), (th_j[:, None] * contrib_s).ravel())
                    A_out[j, i] -= float((pref * th_j).sum()) * mu[j]
    return trunc


def q_gain(
    axis,
    h,
    order,
    ext,
    nodes,
    mu,
    sig_c,
    sig_s1,
    sig_s2,
    sw,
    bsym,
    gamma,
    cphi,
    RFT,
    RGT,
    same,
    GT,
):
    """Gain integral of the symmetric bilinear form, batched over x.

    RFT, RGT: ratios f/mu, g/mu with shape (N, X); GT (N, X) accumulates
    sum over (v_*, sigma) of B * mu'mu'* * [Rf' Rg'* + Rg' Rf'*].
    Both primed ratios are needed per product, so a contribution is dropped
    (and counted) when either stencil is invalid.  Returns the truncation.
    """
    N = nodes.shape[0]
    h3 = h**3
    trunc = 0.0
    pref_k = cphi * bsym * sw * h3

    for i in range(N):
        vi = nodes[i]
        jstart = i if gamma == 0.0 else i + 1
        for j in range(jstart, N):
            vj = nodes[j]
            dn, vp, vs = _pair_geometry(vi, vj, sig_c, sig_s1, sig_s2)
            if dn == 0.0 and gamma > 0.0:
                continue
            pref = pref_k * dn**gamma
            gm = _mu(vp) * _mu(vs)
            cp, wp, okp = _stencil(axis, h, order, ext, vp)
            cs, ws, oks = _stencil(axis, h, order, ext, vs)
            ok = okp & oks
            coef = pref * gm * ok
            trunc += float((pref * gm) @ (~ok))
            rfp = wp[:, :, None] * RFT[cp]  # (S,K,X)
            rfp = rfp.sum(axis=1)  # (S,X) ratio-f at v'
            rfs = (ws[:, :, None] * RFT[cs]).sum(axis=1)
            if same:
                br = 2.0 * rfp * rfs
            else:
                rgp = (wp[:, :, None] * RGT[cp]).sum(axis=1)
                rgs = (ws[:, :, None] * RGT[cs]).sum(axis=1)
                br = rfp * rgs + rgp * rfs
            add = coef @ br  # (X,)
            GT[i] += add
            if j != i:
                GT[j] += add
    return trunc
