"""Cutoff splitting of the linearized operator: L = A + B2 - nu with
A the Theta_delta-mollified compact part and B2 := K - A the remainder."""

import numpy as np
import pytest

from boltzbox.kernels import (
    CollisionModel,
    SplitOperator,
    VelocityGrid,
    apply_A_delta,
    apply_B2_delta,
    estimate_Delta,
    linear_L,
    q_bilinear,
    theta_cutoff,
)
from boltzbox.weights import Weight


@pytest.fixture(scope="module")
def split_model():
    # GL3 polar nodes stay below |cos| = 0.775, so the angular cutoff is
    # identically one for delta <= 0.1 and the small-delta splits collapse
    # to B2 = 0 exactly on this lattice
    vg = VelocityGrid(6, 6.0)
    return CollisionModel(vg, gamma=1.0, cphi=1.0, n_polar=3, n_azimuth=6, interp_order=1)


def _probe(g, rng):
    return g.mu * (1 + 0.3 * np.sin(g.nodes[:, 0]) + 0.1 * g.nodes[:, 1] * rng.uniform(0.5, 1.5))


@pytest.mark.parametrize("delta", [0.4, 0.2, 0.1, 0.05])
def test_split_reassembles_L_exactly(split_model, rng, delta):
    # B2 is defined as K - A, so A + B2 - nu h must reproduce L h to
    # roundoff regardless of delta
    g = split_model.grid
    sp = SplitOperator(split_model, delta)
    h = _probe(g, rng)
    lhs = sp.apply_A(h) + sp.apply_B2(h) - split_model.nu * h
    ref = linear_L(split_model, h)
    assert np.max(np.abs(lhs - ref)) < 1e-13 * max(np.max(np.abs(ref)), 1e-300)


def test_split_matches_bilinear_form(split_model, rng):
    # the reassembled operator agrees with 2 Q(mu, .) of the quadrature
    # sweep within the stated nodewise tolerance
    g = split_model.grid
    sp = SplitOperator(split_model, 0.3)
    for _ in range(3):
        h = _probe(g, rng)
        lhs = sp.apply_A(h) + sp.apply_B2(h) - split_model.nu * h
        rhs = 2.0 * q_bilinear(
            split_model, np.broadcast_to(g.mu, (1, g.size)), h[None], conserve=False
        )[0]
        assert np.max(np.abs(lhs - rhs)) < 1e-9 * np.max(np.abs(rhs))


@pytest.mark.parametrize("delta", [0.4, 0.3])
def test_A_support_exact(split_model, rng, delta):
    g = split_model.grid
    sp = SplitOperator(split_model, delta)
    h = _probe(g, rng)
    outside = g.speed > 2.0 / delta
    assert outside.any()  # the check must actually see the far tail
    Ah = sp.apply_A(h)
    assert np.all(Ah[outside] == 0.0)


def test_B2_vanishes_once_cutoff_saturates(split_model, rng):
    # at delta = 0.05 the speed, separation and angle constraints are all
    # inactive on this bounded lattice, so Theta = 1 and B2 = K - A = 0
    g = split_model.grid
    sp = SplitOperator(split_model, 0.05)
    h = _probe(g, rng)
    assert np.all(sp.apply_B2(h) == 0.0)
    # while at delta = 0.4 the split is genuinely nontrivial
    sp4 = SplitOperator(split_model, 0.4)
    assert np.max(np.abs(sp4.apply_B2(h))) > 0.0


def test_helper_wrappers_match_methods(split_model, rng):
    g = split_model.grid
    sp = SplitOperator(split_model, 0.3)
    h = _probe(g, rng)
    assert np.array_equal(apply_A_delta(sp, h), sp.apply_A(h))
    assert np.array_equal(apply_B2_delta(sp, h), sp.apply_B2(h))


def test_theta_method_matches_cutoff(split_model, rng):
    sp = SplitOperator(split_model, 0.4)
    v = rng.standard_normal((20, 3)) * 3.0
    vs = rng.standard_normal((20, 3)) * 3.0
    sg = rng.standard_normal((20, 3))
    sg /= np.linalg.norm(sg, axis=1)[:, None]
    assert np.array_equal(sp.theta(v, vs, sg), theta_cutoff(0.4, v, vs, sg))


@pytest.mark.parametrize("q", [np.inf, 1.0])
def test_Delta_ladder_monotone(split_model, q):
    w = Weight(kind="polynomial", k=10.0)
    deltas = (0.4, 0.2, 0.1, 0.05)
    ests = [
        estimate_Delta(SplitOperator(split_model, d), w, q, tilde_k=8, n_random=4, seed=7)
        for d in deltas
    ]
    vals = [e.value for e in ests]
    tildes = [e.tilde for e in ests]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(a >= b for a, b in zip(tildes, tildes[1:]))
    # the saturated end is exactly zero on this lattice
    assert vals[-1] == 0.0
    assert tildes[-1] == 0.0
    assert vals[0] > 0.0


def test_estimate_Delta_deterministic(split_model):
    w = Weight(kind="stretch_exp", kappa=0.2, alpha=0.5)
    sp = SplitOperator(split_model, 0.2)
    e1 = estimate_Delta(sp, w, np.inf, n_random=4, seed=7)
    e2 = estimate_Delta(sp, w, np.inf, n_random=4, seed=7)
    assert e1.value == e2.value
    assert e1.argmax == e2.argmax
    assert e1.delta == 0.2
    assert e1.q == np.inf
    assert e1.n_probes > 4  # designed probes come on top of the random ones
    assert e1.argmax in e1.ratios
    assert e1.tilde is None  # not requested


def test_estimate_Delta_vector_weight(split_model):
    g = split_model.grid
    m_vals = (1.0 + g.speed**2) ** 5
    sp = SplitOperator(split_model, 0.2)
    est = estimate_Delta(sp, m_vals, np.inf, n_random=2, seed=3)
    assert est.value >= 0.0
    with pytest.raises(ValueError, match="velocity lattice"):
        estimate_Delta(sp, m_vals[:-1], np.inf, n_random=2, seed=3)
