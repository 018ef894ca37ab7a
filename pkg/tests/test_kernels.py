"""Collision kernels: quadrature rules, the bilinear operator Q, the
linearized operator L = -nu + K, closed-form weight constants, and
agreement between the compiled and pure-python cores."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from boltzbox.kernels import (
    CollisionModel,
    VelocityGrid,
    collision_frequency,
    kq_star,
    linear_K,
    linear_L,
    maxwellian,
    phi_q,
    post_collision,
    project_piL,
    q_bilinear,
    sphere_rule,
    theta_cutoff,
)
from boltzbox.kernels import _core_py
from boltzbox.kernels._backend import core as active_core


# ----------------------------------------------------------------------------
# pointwise ingredients
# ----------------------------------------------------------------------------


def test_maxwellian_pointwise():
    assert maxwellian(np.zeros(3)) == pytest.approx((2 * np.pi) ** -1.5, rel=1e-14)
    v = np.array([1.0, -2.0, 0.5])
    assert maxwellian(v) == pytest.approx(
        (2 * np.pi) ** -1.5 * np.exp(-0.5 * v @ v), rel=1e-14
    )


def test_maxwellian_lattice_mass(vgrid12):
    # midpoint-rule mass defect on the production lattice; the tail beyond
    # vmax=6 carries ~1e-8 of the measure
    mass = np.sum(vgrid12.mu) * vgrid12.w
    assert abs(1.0 - mass) < 5e-8


@given(
    st.lists(st.floats(-4, 4), min_size=6, max_size=6),
    st.floats(0, np.pi),
    st.floats(0, 2 * np.pi),
)
@settings(max_examples=80, deadline=None)
def test_post_collision_conserves(vv, th, ps):
    v = np.array(vv[:3])
    v_star = np.array(vv[3:])
    sigma = np.array(
        [np.sin(th) * np.cos(ps), np.sin(th) * np.sin(ps), np.cos(th)]
    )
    vp, vps = post_collision(v, v_star, sigma)
    assert np.allclose(vp + vps, v + v_star, atol=1e-12)
    assert vp @ vp + vps @ vps == pytest.approx(v @ v + v_star @ v_star, abs=1e-10)


def test_post_collision_identity_direction():
    # sigma along v - v_* reproduces the incoming pair
    v = np.array([1.0, 2.0, -1.0])
    v_star = np.array([0.0, -1.0, 0.5])
    sigma = (v - v_star) / np.linalg.norm(v - v_star)
    vp, vps = post_collision(v, v_star, sigma)
    assert np.allclose(vp, v, atol=1e-14)
    assert np.allclose(vps, v_star, atol=1e-14)


def test_post_collision_rejects_bad_sigma():
    with pytest.raises(ValueError, match="unit vector"):
        post_collision(np.zeros(3), np.ones(3), np.array([1.0, 1.0, 0.0]))


def test_theta_cutoff_plateau_and_support():
    delta = 0.2
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])
    # inner region: moderate speed, moderate separation, near-orthogonal sigma
    assert theta_cutoff(delta, 2.0 * e1, 0.5 * e1, e2) == 1.0
    # |v| beyond 2/delta kills it
    assert theta_cutoff(delta, 11.0 * e1, 0.5 * e1, e2) == 0.0
    # grazing sigma (cos ~ 1) kills it
    assert theta_cutoff(delta, 2.0 * e1, 0.5 * e1, e1) == 0.0
    # near-zero relative velocity kills it
    assert theta_cutoff(delta, 2.0 * e1, 2.0 * e1 + 0.05 * delta * e2, e2) == 0.0
    with pytest.raises(ValueError, match="delta"):
        theta_cutoff(1.5, e1, e2, e2)


@given(
    st.floats(0.05, 0.45),
    st.lists(st.floats(-8, 8), min_size=6, max_size=6),
    st.floats(0, np.pi),
    st.floats(0, 2 * np.pi),
)
@settings(max_examples=60, deadline=None)
def test_theta_cutoff_range(delta, vv, th, ps):
    v = np.array(vv[:3])
    v_star = np.array(vv[3:])
    sigma = np.array(
        [np.sin(th) * np.cos(ps), np.sin(th) * np.sin(ps), np.cos(th)]
    )
    val = theta_cutoff(delta, v, v_star, sigma)
    assert 0.0 <= val <= 1.0


# ----------------------------------------------------------------------------
# quadrature rules
# ----------------------------------------------------------------------------


def test_sphere_rule_moments():
    r = sphere_rule(6, 8)
    assert np.sum(r.w) == pytest.approx(4 * np.pi, rel=1e-13)
    # second moments of the unit sphere: each component integrates to 4pi/3
    for comp in (r.c, r.s1, r.s2):
        assert np.sum(r.w * comp**2) == pytest.approx(4 * np.pi / 3, rel=1e-12)
        assert abs(np.sum(r.w * comp)) < 1e-12
    # unit vectors
    assert np.allclose(r.c**2 + r.s1**2 + r.s2**2, 1.0, atol=1e-13)


def test_sphere_rule_antipodal():
    r = sphere_rule(4, 6)
    pts = np.stack([r.c, r.s1, r.s2], axis=1)
    # node set closed under sigma -> -sigma (pair sweep relies on this)
    d = np.linalg.norm(pts[:, None, :] + pts[None, :, :], axis=-1)
    assert np.all(d.min(axis=1) < 1e-12)
    with pytest.raises(ValueError, match="even"):
        sphere_rule(4, 5)


def test_velocity_grid_structure(vgrid6):
    g = vgrid6
    assert g.w == pytest.approx(g.h**3)
    # midpoint lattice avoids v = 0 and the axes
    assert np.min(np.abs(g.axis)) > 0.4
    # closed under v -> -v
    assert np.allclose(g.nodes[g.neg_index], -g.nodes)
    assert np.all(g.neg_index[g.neg_index] == np.arange(g.size))
    for ax in range(3):
        flipped = g.nodes.copy()
        flipped[:, ax] *= -1
        assert np.allclose(g.nodes[g.flip_index[ax]], flipped)
    with pytest.raises(ValueError, match="at least 4"):
        VelocityGrid(3)


def test_project_piL_properties(vgrid6, rng):
    g = vgrid6
    f = g.mu * (1 + 0.3 * np.sin(g.nodes[:, 0])) + 0.01 * rng.standard_normal(g.size) * g.mu
    fluid, micro = project_piL(g, f)
    assert np.allclose(fluid + micro, f, atol=1e-15)
    # microscopic part carries no collision invariants
    phi = np.concatenate(
        [np.ones((1, g.size)), g.nodes.T, (g.speed**2)[None]], axis=0
    )
    assert np.max(np.abs((micro * g.w) @ phi.T)) < 1e-14
    # idempotent
    fluid2, micro2 = project_piL(g, micro)
    assert np.max(np.abs(fluid2)) < 1e-14
    # fluid part is reproduced exactly
    fluid3, _ = project_piL(g, fluid)
    assert np.allclose(fluid3, fluid, atol=1e-14)


# ----------------------------------------------------------------------------
# collision frequency
# ----------------------------------------------------------------------------


def _nu_spherical_oracle(gamma, r, cphi, l_b):
    """nu(|v|=r) by 2D quadrature in spherical coordinates for v_*:
    independent of the closed-form radial reduction used by nu_profile."""

    def integrand(c, u):
        d2 = r * r + u * u - 2.0 * r * u * c
        return u * u * math.exp(-0.5 * u * u) * d2 ** (0.5 * gamma)

    val, _ = integrate.dblquad(integrand, 0.0, 14.0, -1.0, 1.0, epsabs=1e-12, epsrel=1e-11)
    return cphi * l_b * 2.0 * math.pi * (2.0 * math.pi) ** -1.5 * val


@pytest.mark.parametrize("gamma", [1.0, 0.5])
def test_nu_profile_against_spherical_quadrature(vgrid6, gamma):
    m = CollisionModel(vgrid6, gamma=gamma, cphi=1.0, n_polar=2, n_azimuth=4)
    for r in (0.0, 1.7, 4.0):
        oracle = _nu_spherical_oracle(gamma, r, m.cphi, m.l_b)
        assert m.nu_profile(r) == pytest.approx(oracle, rel=1e-7)


def test_nu_profile_gamma_zero_exact(vgrid6):
    # Phi = const: nu is the plain mass integral, cphi * l_b exactly
    m = CollisionModel(vgrid6, gamma=0.0, cphi=0.25, n_polar=2, n_azimuth=4)
    for r in (0.0, 2.3, 5.0):
        assert m.nu_profile(r) == pytest.approx(0.25 * m.l_b, rel=1e-13)
    # and the lattice value only misses the truncated tail mass
    expected = 0.25 * m.l_b * np.sum(vgrid6.mu) * vgrid6.w
    assert np.max(np.abs(m.nu - expected)) < 1e-12


def test_nu_profile_monotone_and_floor(model8):
    speeds = np.linspace(0.0, 12.0, 60)
    prof = model8.nu_profile(speeds)
    assert np.all(np.diff(prof) > 0.0)  # hard potentials: increasing in |v|
    assert model8.nu_floor == model8.nu_profile(0.0)
    assert model8.nu_floor > 0.0
    assert model8.nu_floor <= np.min(model8.nu_profile(model8.grid.speed)) + 1e-12


def test_lattice_nu_tracks_radial_profile(model6, model8):
    # midpoint-lattice quadrature error in nu; tightens with resolution
    for m, tol in ((model6, 0.08), (model8, 0.04)):
        prof = m.nu_profile(m.grid.speed)
        rel = np.max(np.abs(m.nu - prof) / prof)
        assert rel < tol


def test_collision_frequency_point_eval_and_check(model8):
    g = model8.grid
    # explicit-point path agrees with the cached lattice values
    pts = g.nodes[[0, 17, 311]]
    out = collision_frequency(model8, pts)
    assert np.allclose(out, model8.nu[[0, 17, 311]], rtol=1e-13)
    one = collision_frequency(model8, g.nodes[5])
    assert isinstance(one, float)
    assert one == pytest.approx(model8.nu[5], rel=1e-13)
    # parity consistency probe flags the coarse lattice
    _, info = collision_frequency(model8, check=True)
    assert info["under_resolved"] is True
    assert info["half_lattice_gap"] > 0.05


def test_nu_bounds_on_lattice(model8):
    g = model8.grid
    bracket = 1.0 + g.speed**model8.gamma
    assert np.all(model8.nu >= model8.nu0 * bracket - 1e-12)
    assert np.all(model8.nu <= model8.nu1 * bracket + 1e-12)
    assert 0.0 < model8.nu0 <= model8.nu1


# ----------------------------------------------------------------------------
# bilinear operator
# ----------------------------------------------------------------------------


def _smooth_fields(g, rng, k):
    c = rng.standard_normal((k, 5))
    out = np.zeros((k, g.size))
    for i in range(k):
        p = c[i, 0] + g.nodes @ c[i, 1:4] + c[i, 4] * (g.speed**2 - 3) / np.sqrt(6)
        out[i] = g.mu * p * (1 + 0.2 * np.sin(g.nodes[:, 0]))
    return out


def test_q_mu_mu_vanishes(model8):
    # the Maxwellian is an equilibrium of the quadrature operator to roundoff
    g = model8.grid
    q = q_bilinear(model8, g.mu, conserve=False)
    # roundoff scale: individual gain/loss terms are of size nu * mu
    assert np.max(np.abs(q)) < 1e-12 * np.max(model8.nu * g.mu)


def test_q_bilinear_symmetric(model6, rng):
    g = model6.grid
    f = _smooth_fields(g, rng, 1)[0]
    h = g.mu * np.cos(g.nodes[:, 1])
    qfh = q_bilinear(model6, f, h, conserve=False)
    qhf = q_bilinear(model6, h, f, conserve=False)
    assert np.array_equal(qfh, qhf)  # symmetrized algebraically


def test_q_bilinear_batch_matches_loop(model6, rng):
    g = model6.grid
    F = _smooth_fields(g, rng, 3)
    batch = q_bilinear(model6, F)
    for i in range(3):
        assert np.allclose(batch[i], q_bilinear(model6, F[i]), atol=1e-15)


def test_q_bilinear_shape_mismatch(model6):
    g = model6.grid
    with pytest.raises(ValueError, match="matching shapes"):
        q_bilinear(model6, g.mu, np.zeros((2, g.size)))


def test_q_conserve_filters_invariants(model8, rng):
    g = model8.grid
    F = _smooth_fields(g, rng, 4)
    phi = np.concatenate(
        [np.ones((1, g.size)), g.nodes.T, (g.speed**2)[None]], axis=0
    )
    q = q_bilinear(model8, F)  # conserve=True default
    assert np.max(np.abs((q * g.w) @ phi.T)) < 1e-12
    fluid, _ = project_piL(g, q[0])
    assert np.max(np.abs(fluid)) < 1e-14
    # the raw quadrature leaves a nonzero invariant residual (that is what
    # the filter removes)
    raw = q_bilinear(model8, F, conserve=False)
    assert np.max(np.abs((raw * g.w) @ phi.T)) > 1e-12


def test_gain_truncation_counter(model6, rng):
    before = model6.counters["gain_truncation"]
    f = _smooth_fields(model6.grid, rng, 1)[0]
    q_bilinear(model6, f, conserve=False)
    after = model6.counters["gain_truncation"]
    assert after >= before >= 0.0


# ----------------------------------------------------------------------------
# linearized operator
# ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def model6o2(vgrid6):
    # quadratic interpolation stencil: needed for the energy invariant below
    return CollisionModel(
        vgrid6, gamma=1.0, cphi=1.0, n_polar=2, n_azimuth=4, interp_order=2
    )


def test_K_mu_equals_nu_mu(model6, model8):
    # ratio interpolation makes the Maxwellian identity exact at any order
    for m in (model6, model8):
        g = m.grid
        r = linear_K(m, g.mu) - m.nu * g.mu
        assert np.max(np.abs(r)) < 1e-10 * np.max(m.nu * g.mu)


def test_L_annihilates_invariants(model6o2):
    g = model6o2.grid
    phi = np.concatenate(
        [np.ones((1, g.size)), g.nodes.T, (g.speed**2)[None]], axis=0
    )
    for row in phi:
        h = row * g.mu
        lh = linear_L(model6o2, h)
        num = np.sqrt(np.sum(lh**2) * g.w)
        den = np.sqrt(np.sum(h**2) * g.w)
        assert num < 1e-8 * den


def test_energy_invariant_needs_quadratic_stencil(model6, model6o2):
    # with a trilinear stencil the quadratic ratio |v|^2 is not represented
    # exactly, so L(|v|^2 mu) carries an O(h^2) defect; the quadratic stencil
    # removes it.  Guards the production choice interp_order=2.
    g = model6.grid
    h = g.speed**2 * g.mu

    def rel(m):
        lh = linear_L(m, h)
        return np.sqrt(np.sum(lh**2) / np.sum(h**2))

    assert rel(model6) > 1e-3
    assert rel(model6o2) < 1e-9


def test_L_dissipative(model6o2, rng):
    # <Lf,f> in the mu^{-1} product: strictly negative away from Ker(L),
    # and zero on Ker(L) up to the interpolation defect.  Random fields
    # with a large fluid component only see quadrature noise around zero,
    # so the sign statement is tested on the two components separately.
    g = model6o2.grid
    F = _smooth_fields(g, rng, 6)
    for f in F:
        _, micro = project_piL(g, f)
        lm = linear_L(model6o2, micro)
        s = np.sum(lm * micro / g.mu) * g.w
        nrm = np.sum(micro**2 / g.mu) * g.w
        assert s < -1e-2 * nrm  # spectral gap, coarsely
    phi = np.concatenate(
        [np.ones((1, g.size)), g.nodes.T, (g.speed**2)[None]], axis=0
    )
    for row in phi:
        h = row * g.mu
        s = np.sum(linear_L(model6o2, h) * h / g.mu) * g.w
        nrm = np.sum(h**2 / g.mu) * g.w
        assert abs(s) < 1e-8 * nrm  # equality direction on the kernel


def test_L_matches_2q_mu(model6, rng):
    # L h = 2 Q(mu, h) with the symmetric bilinear form
    g = model6.grid
    h = _smooth_fields(g, rng, 1)[0]
    lh = linear_L(model6, h)
    qh = 2.0 * q_bilinear(model6, np.broadcast_to(g.mu, (1, g.size)), h[None], conserve=False)[0]
    scale = np.max(np.abs(lh))
    assert np.max(np.abs(lh - qh)) < 1e-10 * scale


# ----------------------------------------------------------------------------
# closed-form weight constants
# ----------------------------------------------------------------------------


def test_kq_star_closed_forms():
    b_inf, l_b = 1.0, 4 * np.pi  # constant angular kernel: ratio 16pi b/l_b = 4
    assert kq_star(np.inf, 1.0, b_inf, l_b) == pytest.approx(6.0, abs=1e-12)
    assert kq_star(1.0, 1.0, b_inf, l_b) == pytest.approx(2.0, abs=1e-12)
    assert kq_star(np.inf, 0.0, b_inf, l_b) == pytest.approx(5.0, abs=1e-12)
    # q interpolates between the two endpoints
    assert 2.0 < kq_star(2.0, 1.0, b_inf, l_b) < 6.0
    with pytest.raises(ValueError):
        kq_star(2.0, 1.0, 0.1, 4 * np.pi)  # ratio <= 2 has no admissible k


def test_phi_q_closed_forms():
    b_inf, l_b = 1.0, 4 * np.pi
    assert phi_q(np.inf, 10.0, 1.0, b_inf, l_b) == pytest.approx(0.5, abs=1e-12)
    assert phi_q(1.0, 10.0, 1.0, b_inf, l_b) == pytest.approx(1.0 / 3.0, abs=1e-12)
    with pytest.raises(ValueError):
        phi_q(2.0, 1.5, 1.0, b_inf, l_b)  # k <= 1 + gamma


def test_phi_q_monotone_decreasing_in_k():
    b_inf, l_b = 1.0, 4 * np.pi
    for q in (1.0, 2.0, np.inf):
        ks = np.linspace(3.0, 20.0, 30)
        vals = [phi_q(q, k, 1.0, b_inf, l_b) for k in ks]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert all(v > 0.0 for v in vals)


def test_phi_below_one_at_endpoint_exponents():
    # at q = inf and q = 1 (hard spheres) the contraction factor drops below
    # one exactly at the admissibility threshold k*
    b_inf, l_b = 1.0, 4 * np.pi
    assert phi_q(np.inf, 6.0 + 0.3, 1.0, b_inf, l_b) < 1.0
    assert phi_q(np.inf, 6.0 - 0.3, 1.0, b_inf, l_b) > 1.0
    assert phi_q(1.0, 2.0 + 0.3, 1.0, b_inf, l_b) < 1.0
    # (for q = 1 the region below k* is outside phi_q's domain k > 1 + gamma)


def test_model_validation(vgrid6):
    with pytest.raises(ValueError):
        CollisionModel(vgrid6, gamma=-0.1)
    with pytest.raises(ValueError):
        CollisionModel(vgrid6, gamma=1.5)
    with pytest.raises(ValueError):
        CollisionModel(vgrid6, interp_order=3)
    with pytest.raises(ValueError):
        CollisionModel(vgrid6, n_azimuth=5)


# ----------------------------------------------------------------------------
# compiled vs pure-python core
# ----------------------------------------------------------------------------


@pytest.mark.parametrize("order,n_az", [(1, 4), (2, 4), (1, 6), (2, 6)])
def test_backend_gain_agreement(vgrid6, rng, order, n_az):
    # n_azimuth=4 node sets are invariant under transverse-frame sign
    # permutations, so it alone cannot detect frame or stencil-centering
    # drift between the cores; n_azimuth=6 and order=2 are the cases that
    # actually discriminate
    m = CollisionModel(
        vgrid6, gamma=1.0, cphi=1.0, n_polar=2, n_azimuth=n_az, interp_order=order
    )
    g = m.grid
    F = _smooth_fields(g, rng, 2)
    RFT = np.ascontiguousarray((F / g.mu).T)
    out_a = np.zeros_like(RFT)
    out_b = np.zeros_like(RFT)
    ta = active_core.q_gain(*m._core_args(), RFT, RFT, 1, out_a)
    tb = _core_py.q_gain(*m._core_args(), RFT, RFT, 1, out_b)
    scale = np.max(np.abs(out_a))
    assert np.max(np.abs(out_a - out_b)) < 1e-12 * scale
    assert ta == pytest.approx(tb, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("order", [1, 2])
def test_backend_matrix_agreement(vgrid6, order):
    # entrywise agreement: quadratic-stencil centering at half-integer cells
    # (post-collision points on symmetry planes) must match between cores
    m = CollisionModel(
        vgrid6, gamma=1.0, cphi=1.0, n_polar=2, n_azimuth=6, interp_order=order
    )
    n = vgrid6.size
    args = m._core_args()
    vfac = np.zeros(n)
    ang = np.zeros(m.rule.size)
    K_a = np.zeros((n, n))
    K_b = np.zeros((n, n))
    dummy = np.zeros((1, 1))
    ta = active_core.build_matrices(*args, vfac, ang, 0.5, 0, K_a, dummy)
    tb = _core_py.build_matrices(*args, vfac, ang, 0.5, 0, K_b, dummy)
    scale = np.max(np.abs(K_a))
    assert np.max(np.abs(K_a - K_b)) < 1e-12 * scale
    assert ta == pytest.approx(tb, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("order", [1, 2])
def test_backend_split_matrix_agreement(vgrid6, order):
    # the A-matrix path (mode 1/2) through both cores
    delta = 0.3
    ms = []
    for _ in range(2):
        ms.append(
            CollisionModel(
                vgrid6, gamma=1.0, cphi=1.0, n_polar=2, n_azimuth=6,
                interp_order=order,
            )
        )
    import boltzbox.kernels as _k

    K_a, A_a = ms[0].build_split_matrices(delta)
    orig = _k.core
    _k.core = _core_py
    try:
        K_b, A_b = ms[1].build_split_matrices(delta)
    finally:
        _k.core = orig
    scale = np.max(np.abs(K_a))
    assert np.max(np.abs(K_a - K_b)) < 1e-12 * scale
    a_scale = max(np.max(np.abs(A_a)), 1e-300)
    assert np.max(np.abs(A_a - A_b)) < 1e-12 * a_scale
