"""Velocity-space machinery: cube lattice, sphere quadrature, bilinear
collision operator, linearized operator L = -nu + K, smooth cutoff splitting
L + nu = A + B2, and the hydrodynamic projections.

Conventions
-----------
* Velocity lattice: midpoint cube rule, axis[a] = -vmax + (a + 0.5) h with
  h = 2 vmax / n; closed under v -> -v and contains no zero node.  Flattened
  C-order, index i = (ia*n + ib)*n + ic.
* All velocity functions are arrays over the flat lattice; batched inputs
  carry the velocity axis last, shape (..., N).
* Post-collision evaluation interpolates the ratio f/mu and multiplies by
  the exact Maxwellian at the off-lattice point; this makes Q(mu, mu),
  L mu, and L(phi_i mu) vanish to machine precision.
* The conservative filter (projection of Q(f,g) off the discrete collision
  invariants) is applied to the *bilinear* operator only; the linear
  matrices K, A, B2 are kept raw so the splitting identity
  A + B2 - nu = L holds exactly by construction.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from ._backend import backend_name, core
from . import _core_py as _ref

__all__ = [
    "CollisionModel",
    "DeltaEstimate",
    "SphereRule",
    "SplitOperator",
    "VelocityGrid",
    "apply_A_delta",
    "apply_B2_delta",
    "backend_name",
    "collision_frequency",
    "estimate_Delta",
    "kq_star",
    "linear_K",
    "linear_L",
    "maxwellian",
    "phi_q",
    "post_collision",
    "project_PiG",
    "project_piL",
    "q_bilinear",
    "sphere_rule",
    "theta_cutoff",
]

_MU_NORM = (2.0 * np.pi) ** -1.5


def maxwellian(v):
    """Global Maxwellian mu(v) = (2 pi)^{-3/2} exp(-|v|^2/2), v shape (..., 3)."""
    v = np.asarray(v, float)
    return _MU_NORM * np.exp(-0.5 * np.sum(v * v, axis=-1))


def post_collision(v, v_star, sigma):
    """Pre/post collision velocity map.

    v' = (v+v_*)/2 + (|v-v_*|/2) sigma,  v'_* = (v+v_*)/2 - (|v-v_*|/2) sigma.
    Momentum and energy are conserved algebraically.
    """
    v = np.asarray(v, float)
    v_star = np.asarray(v_star, float)
    sigma = np.asarray(sigma, float)
    ns = np.sqrt(np.sum(sigma * sigma, axis=-1))
    if not np.all(np.abs(ns - 1.0) <= 1e-12):
        raise ValueError("sigma must be a unit vector (|sigma| = 1 within 1e-12)")
    cm = 0.5 * (v + v_star)
    half = 0.5 * np.linalg.norm(v - v_star, axis=-1)[..., None]
    return cm + half * sigma, cm - half * sigma


def theta_cutoff(delta, v, v_star, sigma):
    """Smooth cutoff Theta_delta(v, v_*, sigma) in [0, 1].

    Product of 1D transition bumps in |v|, |v - v_*| and |cos theta|;
    identically 1 on the inner region
        |v| <= 1/delta, 2 delta <= |v-v_*| <= 1/delta, |cos| <= 1 - 2 delta
    and identically 0 outside
        |v| <= 2/delta, delta <= |v-v_*| <= 2/delta, |cos| <= 1 - delta.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    v = np.asarray(v, float)
    v_star = np.asarray(v_star, float)
    sigma = np.asarray(sigma, float)
    speed = np.linalg.norm(v, axis=-1)
    r = v - v_star
    rn = np.linalg.norm(r, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(rn > 0.0, np.sum(sigma * r, axis=-1) / np.where(rn > 0, rn, 1.0), 0.0)
    val = (
        _ref.ramp_down(speed, 1.0 / delta, 2.0 / delta)
        * _ref.ramp_up(rn, delta, 2.0 * delta)
        * _ref.ramp_down(rn, 1.0 / delta, 2.0 / delta)
        * _ref.ramp_down(np.abs(cos), 1.0 - 2.0 * delta, 1.0 - delta)
    )
    return val


# ----------------------------------------------------------------------------
# quadrature rules
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereRule:
    """Product quadrature on S^2 in a local frame aligned with v - v_*.

    c is the polar cosine (Gauss-Legendre), (s1, s2) the two transverse
    components on azimuth midpoints; weights sum to 4 pi.  The node set is
    antipodally symmetric (requires even n_azimuth), which the pair-symmetric
    collision sweep relies on.
    """

    c: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    w: np.ndarray
    n_polar: int
    n_azimuth: int

    @property
    def size(self):
        return self.c.size


def sphere_rule(n_polar, n_azimuth):
    if n_azimuth % 2 != 0:
        raise ValueError("n_azimuth must be even (antipodal symmetry of the rule)")
    x, glw = np.polynomial.legendre.leggauss(n_polar)
    psi = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    st = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    c = np.repeat(x, n_azimuth)
    s1 = np.repeat(st, n_azimuth) * np.tile(np.cos(psi), n_polar)
    s2 = np.repeat(st, n_azimuth) * np.tile(np.sin(psi), n_polar)
    w = np.repeat(glw, n_azimuth) * (2.0 * np.pi / n_azimuth)
    return SphereRule(c=c, s1=s1, s2=s2, w=w, n_polar=n_polar, n_azimuth=n_azimuth)


# ----------------------------------------------------------------------------
# velocity lattice
# ----------------------------------------------------------------------------


class VelocityGrid:
    """Midpoint cube lattice on [-vmax, vmax]^3, closed under v -> -v."""

    def __init__(self, n, vmax=6.0):
        if n < 4:
            raise ValueError("need at least 4 nodes per axis")
        self.n = int(n)
        self.vmax = float(vmax)
        self.h = 2.0 * self.vmax / self.n
        self.axis = -self.vmax + (np.arange(self.n) + 0.5) * self.h
        g = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        self.nodes = np.ascontiguousarray(
            np.stack(g, axis=-1).reshape(-1, 3), dtype=float
        )
        self.size = self.nodes.shape[0]
        self.w = self.h ** 3
        self.speed = np.linalg.norm(self.nodes, axis=1)
        self.mu = maxwellian(self.nodes)
        idx = np.arange(self.size).reshape(self.n, self.n, self.n)
        self.neg_index = np.ascontiguousarray(idx[::-1, ::-1, ::-1].reshape(-1))
        self.flip_index = (
            np.ascontiguousarray(idx[::-1, :, :].reshape(-1)),
            np.ascontiguousarray(idx[:, ::-1, :].reshape(-1)),
            np.ascontiguousarray(idx[:, :, ::-1].reshape(-1)),
        )
        self.parity = (
            (np.add.outer(np.add.outer(np.arange(n), np.arange(n)), np.arange(n)) % 2)
            .reshape(-1)
        )
        # collision invariants {1, v, (|v|^2-3)/sqrt(6)}, re-orthonormalized
        # against the discrete measure mu*w so the projection is idempotent
        # to machine precision on any lattice.
        phi = np.stack(
            [
                np.ones(self.size),
                self.nodes[:, 0],
                self.nodes[:, 1],
                self.nodes[:, 2],
                (self.speed ** 2 - 3.0) / np.sqrt(6.0),
            ]
        )
        gram = (phi * (self.mu * self.w)) @ phi.T
        chol = np.linalg.cholesky(gram)
        self.psi = solve_triangular(chol, phi, lower=True)
        self.phi = phi

    def moments(self, f):
        """Mass, momentum, energy of f (..., N) w.r.t. dv = w * counting."""
        f = np.asarray(f, float)
        return {
            "mass": np.sum(f, axis=-1) * self.w,
            "momentum": f @ self.nodes * self.w,
            "energy": f @ (self.speed ** 2) * self.w,
        }

    def inner_mu(self, f, g):
        """L^2(mu^{-1/2}) inner product <f, g> = sum f g / mu * w."""
        return np.sum(np.asarray(f) * np.asarray(g) / self.mu, axis=-1) * self.w

    def interp_matrix(self, points, order=1, ext=None, ratio=False):
        """Sparse (P, N) evaluation matrix at off-lattice velocity points.

        Clamped Lagrange stencils of the given order; points beyond the
        extension band get an all-zero row.  With ratio=True the matrix
        evaluates mu(p) * interp(f/mu), i.e. apply it to f directly.
        """
        from scipy.sparse import csr_matrix

        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, float)))
        if ext is None:
            ext = 1.5
        cols, wts, valid = _ref._stencil(self.axis, self.h, order, ext, pts)
        wts = wts.copy()
        if ratio:
            wts /= self.mu[cols]
            wts *= maxwellian(pts)[:, None]
        p, k = cols.shape
        rows = np.repeat(np.arange(p), k)
        mat = csr_matrix(
            (wts.reshape(-1), (rows, cols.reshape(-1))), shape=(p, self.size)
        )
        return mat, valid


def project_piL(grid, f):
    """Split f into (fluid, microscopic) against Ker L.

    fluid = sum_i (int f phi_i dv) phi_i mu over the orthonormalized
    invariants {1, v, (|v|^2-3)/sqrt(6)}; idempotent to machine precision.
    """
    f = np.asarray(f, float)
    coef = (f * grid.w) @ grid.psi.T
    fluid = (coef @ grid.psi) * grid.mu
    return fluid, f - fluid


# ----------------------------------------------------------------------------
# collision model
# ----------------------------------------------------------------------------


class CollisionModel:
    """Hard-potential cutoff kernel B = C_Phi |v-v_*|^gamma b(cos theta)
    discretized on a velocity lattice with a fixed sphere rule.

    b is a callable of cos theta (None means b = 1, hard spheres when
    gamma = 1).  The kernel is symmetrized in cos theta per quadrature node,
    which leaves every integral unchanged and keeps the pair sweep valid.
    """

    def __init__(self, grid, gamma=1.0, cphi=1.0, b=None,
                 n_polar=8, n_azimuth=8, interp_order=2, ext_margin=1.5):
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1] (hard potentials with cutoff)")
        if interp_order not in (1, 2):
            raise ValueError("interp_order must be 1 or 2")
        self.grid = grid
        self.gamma = float(gamma)
        self.cphi = float(cphi)
        self.b = b
        self.rule = sphere_rule(n_polar, n_azimuth)
        self.interp_order = int(interp_order)
        self.ext_margin = float(ext_margin)
        if b is None:
            self.bsym = np.ones(self.rule.size)
            self.b_inf = 1.0
        else:
            self.bsym = 0.5 * (
                np.asarray(b(self.rule.c), float) + np.asarray(b(-self.rule.c), float)
            )
            cc = np.linspace(-1.0, 1.0, 4001)
            self.b_inf = float(np.max(b(cc)))
        self.l_b = float(np.sum(self.rule.w * self.bsym))
        self.counters = {"gain_truncation": 0.0}
        self._loss = None
        self._nu = None
        self._nu_quad = None
        self._K = None

    # -- cached pieces -------------------------------------------------------

    @property
    def loss_matrix(self):
        """lossM[i, j] = C_Phi l_b h^3 |v_i - v_j|^gamma (convolution weights)."""
        if self._loss is None:
            nd = self.grid.nodes
            s2 = np.sum(nd * nd, axis=1)
            d2 = s2[:, None] + s2[None, :] - 2.0 * (nd @ nd.T)
            np.maximum(d2, 0.0, out=d2)
            d = np.sqrt(d2)
            if self.gamma == 1.0:
                dg = d
            elif self.gamma == 0.0:
                dg = np.ones_like(d)
            else:
                dg = d ** self.gamma
            self._loss = (self.cphi * self.l_b * self.grid.w) * dg
        return self._loss

    @property
    def nu(self):
        """Collision frequency on the lattice, nu = lossM @ mu."""
        if self._nu is None:
            self._nu = self.loss_matrix @ self.grid.mu
        return self._nu

    @property
    def nu0(self):
        """Fitted lower constant: nu(v) >= nu0 (1 + |v|^gamma) on the lattice."""
        return float(np.min(self.nu / (1.0 + self.grid.speed ** self.gamma)))

    @property
    def nu1(self):
        return float(np.max(self.nu / (1.0 + self.grid.speed ** self.gamma)))

    def nu_profile(self, speed):
        """The exact radial collision frequency nu(|v|) of the continuum
        operator, by 1D Gauss-Legendre quadrature: the angular integral of
        |v - u|^gamma against the Maxwellian collapses to

            nu(r) = C_Phi l_b (2 pi)^{-1/2} / (r (gamma+2))
                    * int_0^inf u e^{-u^2/2} [(r+u)^{g+2} - |r-u|^{g+2}] du.

        Exactly radial (unlike the lattice sum nu), hence the collision
        damping used by the pointwise semigroup evaluators: specular
        reflections preserve speed, so e^{-nu(|v|)t} factors compose into
        an exact semigroup law."""
        if self._nu_quad is None:
            xs, ws = np.polynomial.legendre.leggauss(160)
            cut = 12.0
            u = 0.5 * cut * (xs + 1.0)
            w = ws * (0.5 * cut) * u * np.exp(-0.5 * u ** 2)
            self._nu_quad = (u, w)
        u, w = self._nu_quad
        r = np.atleast_1d(np.asarray(speed, float))
        g2 = self.gamma + 2.0
        pref = self.cphi * self.l_b / math.sqrt(2.0 * math.pi)
        small = r < 1e-8
        rs = np.where(small, 1.0, r)
        vals = ((rs[:, None] + u) ** g2 - np.abs(rs[:, None] - u) ** g2) @ w
        out = pref * vals / (rs * g2)
        if np.any(small):
            out[small] = pref * 2.0 * float((u ** (self.gamma + 1)) @ w)
        return out if out.size > 1 else float(out[0])

    @property
    def nu_floor(self):
        """inf_v of the radial collision frequency; attained at v = 0
        (hard potentials make nu(|v|) non-decreasing in speed)."""
        return self.nu_profile(0.0)

    def _core_args(self):
        g, r = self.grid, self.rule
        return (
            g.axis, g.h, self.interp_order, self.ext_margin,
            g.nodes, g.mu, r.c, r.s1, r.s2, r.w, self.bsym,
            self.gamma, self.cphi,
        )

    @property
    def K_matrix(self):
        """Dense gain-part matrix with K mu = nu mu; L = -nu + K."""
        if self._K is None:
            n = self.grid.size
            K = np.zeros((n, n))
            dummy = np.zeros((1, 1))
            vfac = np.zeros(n)
            ang = np.zeros(self.rule.size)
            trunc = core.build_matrices(
                *self._core_args(), vfac, ang, 0.5, 0, K, dummy
            )
            self.counters["gain_truncation"] += float(trunc)
            self._K = K
        return self._K

    def build_split_matrices(self, delta):
        """Return (K, A) for the Theta_delta splitting; one quadrature sweep
        fills both when K is not yet cached."""
        n = self.grid.size
        vfac = _ref.ramp_down(self.grid.speed, 1.0 / delta, 2.0 / delta)
        ang = _ref.ramp_down(np.abs(self.rule.c), 1.0 - 2.0 * delta, 1.0 - delta)
        A = np.zeros((n, n))
        if self._K is None:
            K = np.zeros((n, n))
            trunc = core.build_matrices(*self._core_args(), vfac, ang, delta, 1, K, A)
            self._K = K
        else:
            dummy = np.zeros((1, 1))
            trunc = core.build_matrices(*self._core_args(), vfac, ang, delta, 2, dummy, A)
        self.counters["gain_truncation"] += float(trunc)
        return self._K, A


def collision_frequency(model, v=None, check=False):
    """nu(v) = C_Phi l_b int |v - v_*|^gamma mu_* dv_* by lattice quadrature.

    v = None returns the cached lattice values.  check=True additionally
    compares the two parity sublattices (a Richardson-style consistency
    probe) and returns (nu, info) with an under-resolution flag.
    """
    g = model.grid
    if v is None:
        out = model.nu.copy()
        dg = None
    else:
        pts = np.atleast_2d(np.asarray(v, float))
        d = np.linalg.norm(pts[:, None, :] - g.nodes[None, :, :], axis=-1)
        dg = d ** model.gamma if model.gamma > 0.0 else np.ones_like(d)
        out = (model.cphi * model.l_b * g.w) * (dg @ g.mu)
        if np.ndim(v) == 1:
            out = float(out[0])
    if not check:
        return out
    if dg is None:
        pts = g.nodes
        d = np.linalg.norm(pts[:, None, :] - g.nodes[None, :, :], axis=-1)
        dg = d ** model.gamma if model.gamma > 0.0 else np.ones_like(d)
    scale = model.cphi * model.l_b * 2.0 * g.w
    mu_even = np.where(g.parity == 0, g.mu, 0.0)
    mu_odd = np.where(g.parity == 1, g.mu, 0.0)
    nu_even = scale * (dg @ mu_even)
    nu_odd = scale * (dg @ mu_odd)
    gap = np.max(np.abs(nu_even - nu_odd) / np.maximum(np.abs(out), 1e-300))
    info = {"half_lattice_gap": float(gap), "under_resolved": bool(gap > 0.05)}
    return out, info


def q_bilinear(model, f, g=None, conserve=True):
    """Symmetric bilinear collision operator
    Q(f,g) = (1/2) int int B [f'g'_* + g'f'_* - f g_* - g f_*] dsigma dv_*.

    f, g are lattice functions, shape (..., N); batches share one quadrature
    sweep.  Post-collision values use ratio interpolation; contributions
    whose stencil leaves the extension band are dropped and accounted in
    model.counters["gain_truncation"].  With conserve=True the output is
    filtered by pi_L^perp so the discrete collision invariants of Q vanish
    identically (the quadrature itself leaves a small invariant residual,
    see the module docstring).
    """
    grid = model.grid
    f = np.asarray(f, float)
    same = g is None or g is f
    shape = f.shape
    F2 = f.reshape(-1, grid.size)
    RFT = np.ascontiguousarray((F2 / grid.mu).T)
    if same:
        G2 = F2
        RGT = RFT
    else:
        g = np.asarray(g, float)
        if g.shape != shape:
            raise ValueError("f and g must have matching shapes")
        G2 = g.reshape(-1, grid.size)
        RGT = np.ascontiguousarray((G2 / grid.mu).T)
    GT = np.zeros_like(RFT)
    trunc = core.q_gain(*model._core_args(), RFT, RGT, 1 if same else 0, GT)
    model.counters["gain_truncation"] += float(trunc)
    lm = model.loss_matrix
    Q = 0.5 * GT.T - 0.5 * (F2 * (G2 @ lm) + G2 * (F2 @ lm))
    if conserve:
        coef = (Q * grid.w) @ grid.psi.T
        Q = Q - (coef @ grid.psi) * grid.mu
    return Q.reshape(shape)


def linear_K(model, f):
    """Gain part of the linearized operator: K f with L = -nu + K."""
    f = np.asarray(f, float)
    return f @ model.K_matrix.T


def linear_L(model, f):
    """Linearized collision operator L f = 2 Q(mu, f) = -nu f + K f."""
    f = np.asarray(f, float)
    return f @ model.K_matrix.T - model.nu * f


# ----------------------------------------------------------------------------
# cutoff splitting
# ----------------------------------------------------------------------------


class SplitOperator:
    """Theta_delta splitting of the linearized operator: L + nu = A + B2,
    with A the compactly supported regularizing part and B2 = K - A the
    grazing/tail remainder.  The identity A + B2 - nu = L is exact by
    construction (B2 is literally K - A)."""

    def __init__(self, model, delta):
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        self.model = model
        self.grid = model.grid
        self.delta = float(delta)
        self.R_delta = 2.0 / self.delta
        K, A = model.build_split_matrices(self.delta)
        self.A_kernel = A
        self.B2 = K - A
        self.C_A = float(np.max(np.sum(np.abs(A), axis=1)))

    def theta(self, v, v_star, sigma):
        return theta_cutoff(self.delta, v, v_star, sigma)

    def apply_A(self, h):
        return np.asarray(h, float) @ self.A_kernel.T

    def apply_B2(self, h):
        return np.asarray(h, float) @ self.B2.T


def apply_A_delta(split, h):
    return split.apply_A(h)


def apply_B2_delta(split, h):
    return split.apply_B2(h)


def kq_star(q, gamma, b_inf, l_b):
    """Critical weight exponent
    k_q^* = (16 pi b_inf/l_b - 2)^{1/q} (1 + gamma + 16 pi b_inf/l_b)^{1-1/q},
    with the convention 1/inf = 0."""
    ratio = 16.0 * np.pi * b_inf / l_b
    if ratio <= 2.0:
        raise ValueError("16*pi*b_inf/l_b must exceed 2 for k_q* to be defined")
    invq = 0.0 if np.isinf(q) else 1.0 / q
    return (ratio - 2.0) ** invq * (1.0 + gamma + ratio) ** (1.0 - invq)


def phi_q(q, k, gamma, b_inf, l_b):
    """Limiting smallness constant
    phi_q(k) = (16 pi b_inf/l_b) (1/(k+2))^{1/q} (1/(k-1-gamma))^{1-1/q};
    strictly below 1 when k > k_q^*."""
    if k <= 1.0 + gamma:
        raise ValueError("k must exceed 1 + gamma for phi_q to be defined")
    ratio = 16.0 * np.pi * b_inf / l_b
    invq = 0.0 if np.isinf(q) else 1.0 / q
    return ratio * (1.0 / (k + 2.0)) ** invq * (1.0 / (k - 1.0 - gamma)) ** (1.0 - invq)


@dataclass
class DeltaEstimate:
    """Probe-family lower estimate of the weighted smallness constant of B2."""

    value: float
    delta: float
    q: float
    n_probes: int
    argmax: str
    tilde: float = None
    ratios: dict = field(default_factory=dict, repr=False)


def _weighted_norm(h, m, w, q):
    hm = np.abs(h) * m
    if np.isinf(q):
        return float(np.max(hm))
    return float(np.sum(hm ** q * w) ** (1.0 / q))


def _probe_family(grid, m_vals, n_random, seed):
    probes = []
    order = np.argsort(grid.speed)
    for i in order[-6:]:
        e = np.zeros(grid.size)
        e[i] = 1.0
        probes.append((f"bump@|v|={grid.speed[i]:.2f}", e))
    e = np.zeros(grid.size)
    e[order[0]] = 1.0
    probes.append(("bump@center", e))
    inv = 1.0 / m_vals
    probes.append(("inverse-weight", inv))
    for r in (2.0, 4.0):
        probes.append((f"inverse-weight|v|>{r:g}", np.where(grid.speed > r, inv, 0.0)))
        probes.append((f"inverse-weight|v|<{r:g}", np.where(grid.speed < r, inv, 0.0)))
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        probes.append((f"random{i}", rng.standard_normal(grid.size) * inv))
    return probes


def estimate_Delta(split, m, q, tilde_k=None, n_random=8, seed=2024):
    """Probe-maximized lower estimate of
    Delta = sup_h ||B2 h||_{L^q(nu^{-1} m)} / ||h||_{L^q(m)}.

    m is a weight: anything with .evaluate(points) (see boltzbox.weights) or
    a vector of node values.  tilde_k additionally reports the mixed-norm
    variant (output L^1_v(<v>^2), input L^inf_v(<v>^k)).
    """
    grid = split.grid
    if hasattr(m, "evaluate"):
        m_vals = np.asarray(m.evaluate(grid.nodes), float)
    else:
        m_vals = np.asarray(m, float)
        if m_vals.shape != (grid.size,):
            raise ValueError("weight values must live on the velocity lattice")
    probes = _probe_family(grid, m_vals, n_random, seed)
    if not probes:
        raise ValueError("empty probe family")
    nu = split.model.nu
    out_w = m_vals / nu
    best, best_tag = -np.inf, ""
    best_tilde = -np.inf
    ratios = {}
    bracket = np.sqrt(1.0 + grid.speed ** 2)
    for tag, h in probes:
        den = _weighted_norm(h, m_vals, grid.w, q)
        if den == 0.0:
            continue
        bh = split.apply_B2(h)
        r = _weighted_norm(bh, out_w, grid.w, q) / den
        ratios[tag] = r
        if r > best:
            best, best_tag = r, tag
        if tilde_k is not None:
            den_t = _weighted_norm(h, bracket ** tilde_k, grid.w, np.inf)
            if den_t > 0.0:
                rt = _weighted_norm(bh, bracket ** 2, grid.w, 1.0) / den_t
                best_tilde = max(best_tilde, rt)
    return DeltaEstimate(
        value=float(best),
        delta=split.delta,
        q=float(q),
        n_probes=len(probes),
        argmax=best_tag,
        tilde=None if tilde_k is None else float(best_tilde),
        ratios=ratios,
    )


# ----------------------------------------------------------------------------
# global projection
# ----------------------------------------------------------------------------


def project_PiG(f, boundary_condition, grid=None, cell_volumes=None):
    """Global projection onto the conserved directions of the full dynamics.

    Diffusive walls conserve mass only: span{mu}.  Specular walls conserve
    mass and energy: span{mu, |v|^2 mu}.  The projection is orthogonal in
    the global L^2(mu^{-1/2}) inner product sum_x vol_x sum_v F G / mu w,
    with the basis Gram-orthonormalized so idempotency and exact moment
    removal hold on any discrete domain.

    f is either a phase-space field object (with .data, .vgrid,
    .cell_volumes) or a plain (X, N) array plus explicit grid/cell_volumes.
    Returns (conserved, orthogonal).
    """
    if hasattr(f, "data") and hasattr(f, "vgrid"):
        data = np.asarray(f.data, float)
        grid = f.vgrid
        cell_volumes = f.cell_volumes
    else:
        data = np.asarray(f, float)
        if grid is None:
            raise ValueError("grid required when f is a plain array")
    if boundary_condition not in ("specular", "diffusive"):
        raise ValueError(f"unknown boundary condition: {boundary_condition!r}")
    shape = data.shape
    F = np.atleast_2d(data.reshape(-1, grid.size))
    nx = F.shape[0]
    vol = np.broadcast_to(np.asarray(cell_volumes, float), (nx,))
    basis = [np.broadcast_to(grid.mu, (nx, grid.size))]
    if boundary_condition == "specular":
        basis.append(np.broadcast_to(grid.speed ** 2 * grid.mu, (nx, grid.size)))
    nb = len(basis)
    # global inner product <F, G> = sum_x vol_x sum_v F G / mu * w
    def gip(a, b):
        return float(np.sum(vol @ (a * b / grid.mu)) * grid.w)

    gram = np.array([[gip(basis[i], basis[j]) for j in range(nb)] for i in range(nb)])
    rhs = np.array([gip(F, basis[i]) for i in range(nb)])
    coef = np.linalg.solve(gram, rhs)
    conserved = sum(c * b for c, b in zip(coef, basis))
    orthogonal = F - conserved
    return conserved.reshape(shape), orthogonal.reshape(shape)
