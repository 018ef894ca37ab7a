import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boltzbox.geometry import (
    Domain,
    backward_exit_time,
    bisect_exit_time,
    classify_phase_point,
    outward_normal,
    specular_reflect,
    trace_specular,
)

DOMAINS = {
    "ball": Domain.ball(radius=1.0),
    "offset_ball": Domain.ball(center=(0.3, -0.2, 0.1), radius=0.7),
    "ellipsoid": Domain.ellipsoid(semi_axes=(1.0, 0.6, 0.8)),
    "slab": Domain.slab(),
}


def _random_interior(dom, rng):
    if dom.kind == "slab":
        return np.array([rng.uniform(0.02, 0.98), rng.uniform(0, 1), rng.uniform(0, 1)])
    while True:
        x = dom.center + rng.uniform(-1, 1, 3) * (
            dom.params if dom.kind == "ellipsoid" else dom.params[0]
        )
        if dom.xi(x)[0] < -0.05:
            return x


# -- construction ------------------------------------------------------------


def test_bad_domains_rejected():
    with pytest.raises(ValueError):
        Domain.ball(radius=0.0)
    with pytest.raises(ValueError):
        Domain.ball(radius=-1.0)
    with pytest.raises(ValueError):
        Domain.ellipsoid(semi_axes=(1.0, 0.0, 1.0))


def test_xi_sign_convention():
    dom = Domain.ball(radius=1.0)
    assert dom.xi([0.0, 0.0, 0.0])[0] < 0
    assert abs(dom.xi([1.0, 0.0, 0.0])[0]) < 1e-15
    assert dom.xi([2.0, 0.0, 0.0])[0] > 0
    slab = Domain.slab()
    assert slab.xi([0.5, 7.0, -3.0])[0] == -1.0
    assert slab.xi([0.0, 0.0, 0.0])[0] == 0.0
    assert slab.xi([1.0, 0.0, 0.0])[0] == 0.0


def test_project_to_boundary_corrects_drift():
    """The projector is a two-step Newton drift fix: from points a little
    off the boundary (the situation after a long free flight) it must land
    back on the level set to full precision."""
    rng = np.random.default_rng(7)
    for dom in (DOMAINS["ball"], DOMAINS["ellipsoid"]):
        ax = dom.params if dom.kind == "ellipsoid" else dom.params[0]
        for _ in range(50):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d / ax)  # exact boundary point
            x = dom.center + d + rng.normal(0, 1e-3, 3)  # drifted footprint
            xb = dom.project_to_boundary(x)
            val, grad = dom.xi(xb)
            assert abs(val) < 1e-8 * max(1.0, np.max(np.abs(grad)))


# -- reflection --------------------------------------------------------------


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=80, deadline=None)
def test_reflection_involution_and_speed(seed):
    rng = np.random.default_rng(seed)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    v = rng.normal(size=3) * rng.uniform(0.1, 10)
    w = specular_reflect(n, v)
    assert np.allclose(specular_reflect(n, w), v, atol=1e-12)
    assert abs(np.linalg.norm(w) - np.linalg.norm(v)) < 1e-12
    # tangential part untouched, normal part flipped
    assert abs(float(w @ n) + float(v @ n)) < 1e-12


def test_reflection_requires_unit_normal():
    with pytest.raises(ValueError):
        specular_reflect([2.0, 0.0, 0.0], [1.0, 1.0, 1.0])


# -- exit times --------------------------------------------------------------


@pytest.mark.parametrize("name", ["ball", "offset_ball", "ellipsoid"])
def test_exit_time_matches_bisection(name):
    dom = DOMAINS[name]
    rng = np.random.default_rng(11)
    for _ in range(200):
        x = _random_interior(dom, rng)
        v = rng.normal(size=3)
        et = backward_exit_time(dom, x, v)
        tb = bisect_exit_time(dom, x, v)
        assert abs(et.t - tb) < 1e-10
        val, grad = dom.xi(et.x)
        assert abs(val) < 1e-9 * max(1.0, np.max(np.abs(grad)))


def test_slab_exit_time_closed_form():
    dom = DOMAINS["slab"]
    et = backward_exit_time(dom, [0.25, 0.0, 0.0], [0.5, 0.3, -0.2])
    assert abs(et.t - 0.5) < 1e-15
    assert et.x[0] == 0.0
    et = backward_exit_time(dom, [0.25, 0.0, 0.0], [-0.5, 0.0, 0.0])
    assert abs(et.t - 1.5) < 1e-15
    assert et.x[0] == 1.0
    # v1 = 0: tangentially periodic flight never exits
    et = backward_exit_time(dom, [0.25, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert math.isinf(et.t)


def test_stationary_velocity_rejected():
    with pytest.raises(ValueError, match="stationary velocity has no exit time"):
        backward_exit_time(DOMAINS["ball"], [0.1, 0.0, 0.0], [0.0, 0.0, 0.0])


def test_wall_start_degenerate():
    dom = DOMAINS["slab"]
    # backward ray x - s v: with v1 > 0 at the left wall it leaves at once
    et = backward_exit_time(dom, [0.0, 0.5, 0.5], [1.0, 0.0, 0.0])
    assert et.t == 0.0 and et.degenerate
    # with v1 < 0 it crosses the slab and exits at the far wall
    et = backward_exit_time(dom, [0.0, 0.5, 0.5], [-1.0, 0.0, 0.0])
    assert abs(et.t - 1.0) < 1e-15 and et.x[0] == 1.0


# -- normals and classification ----------------------------------------------


def test_outward_normal_directions():
    dom = DOMAINS["ball"]
    n = outward_normal(dom, [1.0, 0.0, 0.0])
    assert np.allclose(n, [1.0, 0.0, 0.0], atol=1e-12)
    slab = DOMAINS["slab"]
    assert np.allclose(outward_normal(slab, [0.0, 0.2, 0.9]), [-1.0, 0.0, 0.0])
    assert np.allclose(outward_normal(slab, [1.0, 0.2, 0.9]), [1.0, 0.0, 0.0])
    with pytest.raises(ValueError, match="not on boundary"):
        outward_normal(dom, [0.5, 0.0, 0.0])


def test_classify_phase_point():
    dom = DOMAINS["ball"]
    assert classify_phase_point(dom, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]) == "interior"
    out = classify_phase_point(dom, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert out.klass == "outgoing" and out.dot > 0
    inc = classify_phase_point(dom, [1.0, 0.0, 0.0], [-1.0, 0.5, 0.0])
    assert inc.klass == "incoming"
    gr = classify_phase_point(dom, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert gr.klass == "grazing"
    with pytest.raises(ValueError, match="outside domain"):
        classify_phase_point(dom, [2.0, 0.0, 0.0], [1.0, 0.0, 0.0])


# -- backward tracing --------------------------------------------------------


def test_trace_free_flight_short_time():
    dom = DOMAINS["ball"]
    x = np.array([0.2, 0.1, -0.3])
    v = np.array([1.0, -0.5, 0.25])
    chain = trace_specular(dom, 0.05, x, v)
    assert chain.reached and not chain.hits
    _, X, V = chain.terminal
    assert np.allclose(X, x - 0.05 * v, atol=1e-14)
    assert np.allclose(V, v, atol=1e-14)


@pytest.mark.parametrize("name", ["ball", "ellipsoid", "slab"])
def test_trace_chain_bookkeeping(name):
    dom = DOMAINS[name]
    rng = np.random.default_rng(23)
    for _ in range(25):
        x = _random_interior(dom, rng)
        v = rng.normal(size=3) * 2.0
        if dom.kind == "slab" and abs(v[0]) < 0.1:
            v[0] = 0.5
        chain = trace_specular(dom, 3.0, x, v)
        assert chain.reached
        speed = np.linalg.norm(v)
        ts = [h[0] for h in chain.hits]
        assert all(ts[i] > ts[i + 1] for i in range(len(ts) - 1))
        assert all(0.0 < t < 3.0 for t in ts)
        for _, xb, vb in chain.hits:
            assert abs(np.linalg.norm(vb) - speed) < 1e-10
        _, X, V = chain.terminal
        assert abs(np.linalg.norm(V) - speed) < 1e-10
        assert dom.xi(X)[0] < 1e-9


def test_trace_slab_matches_unfolding():
    dom = DOMAINS["slab"]
    rng = np.random.default_rng(5)
    for _ in range(50):
        x1 = rng.uniform(0.05, 0.95)
        v1 = rng.uniform(-3, 3)
        if abs(v1) < 0.05:
            continue
        t = rng.uniform(0.1, 5.0)
        chain = trace_specular(dom, t, [x1, 0.4, 0.6], [v1, 0.0, 0.0])
        _, X, V = chain.terminal
        z = (x1 - t * v1) % 2.0
        want_x = z if z <= 1.0 else 2.0 - z
        want_sign = 1.0 if z <= 1.0 else -1.0
        assert abs(X[0] - want_x) < 1e-9
        assert abs(V[0] - want_sign * v1) < 1e-12


def test_trace_grazing_raises():
    dom = DOMAINS["ball"]
    # start on the boundary moving exactly tangentially: first rebound grazes
    with pytest.raises(RuntimeError, match="grazing rebound encountered"):
        trace_specular(dom, 10.0, [1.0, 0.0, 0.0], [0.0, 1e-12, 0.0])


def test_trace_rebound_budget():
    dom = DOMAINS["slab"]
    with pytest.raises(RuntimeError, match="rebound budget exhausted"):
        trace_specular(dom, 100.0, [0.5, 0.5, 0.5], [5.0, 0.0, 0.0], max_rebounds=3)


def test_trace_time_reversal_consistency():
    """Tracing t then tracing back -t worth of flight returns to the start:
    run the chain forward from the terminal and compare."""
    dom = DOMAINS["ellipsoid"]
    rng = np.random.default_rng(99)
    for _ in range(20):
        x = _random_interior(dom, rng)
        v = rng.normal(size=3)
        t = rng.uniform(0.2, 2.0)
        chain = trace_specular(dom, t, x, v)
        _, X, V = chain.terminal
        # backward from (x, v) ended at (X, V); forward from (X, -V) for the
        # same time must end at (x, -v)
        back = trace_specular(dom, t, X, -V)
        _, X2, V2 = back.terminal
        assert np.allclose(X2, x, atol=1e-8)
        assert np.allclose(-V2, v, atol=1e-8)
