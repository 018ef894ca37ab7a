"""Convex bounded domains and backward billiard characteristics.

Domains are level sets {xi < 0} of a smooth convex function with nonvanishing
gradient on the boundary.  Three kinds are supported: ball, ellipsoid, and the
unit slab (walls at x1 = 0 and x1 = 1, periodic in x2/x3).  Quadric level sets
give closed-form backward exit times; a bisection fallback exists mainly as a
test oracle.

Backward tracing follows the characteristic x - s*v through specular rebounds
and records the rebound sequence (t_i, x_i, v_i).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TOL_BOUNDARY = 1e-10
TOL_GRAZE = 1e-9


@dataclass(frozen=True)
class Domain:
    """Convex body {x : xi(x) < 0}.

    kind: 'ball' | 'ellipsoid' | 'slab'.
    convexity_constant: lower bound c with Hess(xi)[y,y] >= c|y|^2 (0 for slab).
    """

    kind: str
    center: np.ndarray
    params: np.ndarray  # radius (ball), semi-axes (ellipsoid), unused (slab)
    convexity_constant: float

    @staticmethod
    def ball(center=(0.0, 0.0, 0.0), radius=1.0) -> "Domain":
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        return Domain("ball", np.asarray(center, float), np.array([float(radius)]), 2.0)

    @staticmethod
    def ellipsoid(center=(0.0, 0.0, 0.0), semi_axes=(1.0, 1.0, 1.0)) -> "Domain":
        ax = np.asarray(semi_axes, float)
        if np.any(ax <= 0):
            raise ValueError("ellipsoid semi-axes must be positive")
        return Domain("ellipsoid", np.asarray(center, float), ax, float(2.0 / np.max(ax) ** 2))

    @staticmethod
    def slab() -> "Domain":
        return Domain("slab", np.zeros(3), np.zeros(0), 0.0)

    def xi(self, x) -> tuple[float, np.ndarray]:
        """Level-set value and gradient at x."""
        x = np.asarray(x, float)
        if self.kind == "ball":
            d = x - self.center
            r = self.params[0]
            return float(d @ d - r * r), 2.0 * d
        if self.kind == "ellipsoid":
            d = (x - self.center) / self.params
            return float(d @ d - 1.0), 2.0 * d / self.params
        # slab: zero at x1 = 0 and x1 = 1, minimum -1 at the midplane
        x1 = x[0]
        return float(4.0 * x1 * x1 - 4.0 * x1), np.array([8.0 * x1 - 4.0, 0.0, 0.0])

    def inside(self, x, tol=0.0) -> bool:
        return self.xi(x)[0] < tol

    def diameter(self) -> float:
        if self.kind == "ball":
            return 2.0 * self.params[0]
        if self.kind == "ellipsoid":
            return 2.0 * float(np.max(self.params))
        return 1.0

    def project_to_boundary(self, x) -> np.ndarray:
        """One Newton step on xi along the gradient; stops footprint drift."""
        x = np.asarray(x, float)
        for _ in range(2):
            val, grad = self.xi(x)
            g2 = grad @ grad
            if g2 == 0.0:
                break
            x = x - (val / g2) * grad
        return x


@dataclass(frozen=True)
class BoundaryPhasePoint:
    x: np.ndarray
    v: np.ndarray
    dot: float
    klass: str  # 'outgoing' | 'incoming' | 'grazing'


@dataclass
class ExitTime:
    t: float
    x: np.ndarray | None
    degenerate: bool = False


@dataclass
class ReboundChain:
    """Backward trajectory record.

    hits: list of (t_i, x_i, v_i) with strictly decreasing t_i; v_i is the
    velocity carried backward away from the i-th footprint (post-reflection
    for specular chains, freshly drawn for diffusive ones).
    terminal: ('reached', X, V) when the chain reaches time 0, else
    ('active', t_p, x_p, v_p).
    """

    origin: tuple
    hits: list = field(default_factory=list)
    terminal: tuple = ()
    kind: str = "specular"

    @property
    def reached(self) -> bool:
        return self.terminal and self.terminal[0] == "reached"


def outward_normal(domain: Domain, x) -> np.ndarray:
    val, grad = domain.xi(x)
    if abs(val) > TOL_BOUNDARY * max(1.0, float(np.max(np.abs(grad)))):
        raise ValueError("not on boundary")
    return grad / np.linalg.norm(grad)


def specular_reflect(n, v) -> np.ndarray:
    n = np.asarray(n, float)
    v = np.asarray(v, float)
    nn = float(n @ n)
    if abs(nn - 1.0) > 1e-12:
        raise ValueError("normal must be a unit vector")
    return v - 2.0 * float(v @ n) * n


def backward_exit_time(domain: Domain, x, v) -> ExitTime:
    """Smallest t > 0 with x - t v on the boundary.

    The backward ray x - s v starts in the closure of the domain; quadric
    level sets reduce to a quadratic in t.  Slab flights with v1 = 0 never
    exit (tangentially periodic): t = inf.
    """
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    sp = float(v @ v)
    if sp == 0.0:
        raise ValueError("stationary velocity has no exit time")

    if domain.kind == "slab":
        v1, x1 = v[0], x[0]
        if v1 == 0.0:
            return ExitTime(math.inf, None)
        t = x1 / v1 if v1 > 0 else (x1 - 1.0) / v1
        if t <= 0.0:
            # on a wall with the backward ray leaving immediately
            return ExitTime(0.0, x.copy(), degenerate=True)
        xb = x - t * v
        xb[0] = 0.0 if v1 > 0 else 1.0
        return ExitTime(t, xb)

    # ball / ellipsoid: |(x - c - t v) / a|^2 = r^2 reduces to
    # a2 t^2 - 2 b t + c0 = 0 with c0 <= 0 inside.
    if domain.kind == "ball":
        d = x - domain.center
        u = v
        r2 = domain.params[0] ** 2
    else:
        d = (x - domain.center) / domain.params
        u = v / domain.params
        r2 = 1.0
    a2 = float(u @ u)
    b = float(d @ u)
    c0 = float(d @ d) - r2
    disc = b * b - a2 * c0
    if disc < 0.0:  # numerically outside; clamp
        disc = 0.0
    t = (b + math.sqrt(disc)) / a2
    if t <= 0.0:
        return ExitTime(0.0, x.copy(), degenerate=True)
    xb = domain.project_to_boundary(x - t * v)
    return ExitTime(t, xb)


def bisect_exit_time(domain: Domain, x, v, tol=1e-13, max_iter=200) -> float:
    """Bisection oracle for the backward exit time (ball/ellipsoid)."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    hi = domain.diameter() / np.linalg.norm(v) * 1.0001
    lo = 0.0
    if domain.xi(x - hi * v)[0] < 0:
        raise ValueError("bracketing failed")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if domain.xi(x - mid * v)[0] < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _wrap_tangential(domain: Domain, x: np.ndarray) -> np.ndarray:
    if domain.kind == "slab":
        x = x.copy()
        x[1] %= 1.0
        x[2] %= 1.0
    return x


def trace_specular(domain: Domain, t: float, x, v, max_rebounds: int = 10_000) -> ReboundChain:
    """Backward specular trace over time t from phase point (x, v).

    Iterates free flight + reflection until the accumulated backward time
    reaches t.  Speeds are preserved exactly; footprints are re-projected
    onto the boundary after each reflection.
    """
    x = np.asarray(x, float).copy()
    v = np.asarray(v, float).copy()
    chain = ReboundChain(origin=(float(t), x.copy(), v.copy()), kind="specular")
    remaining = float(t)
    cur_t = float(t)
    while True:
        et = backward_exit_time(domain, x, v)
        if et.t >= remaining:
            X = _wrap_tangential(domain, x - remaining * v)
            chain.terminal = ("reached", X, v.copy())
            return chain
        if len(chain.hits) >= max_rebounds:
            raise RuntimeError("rebound budget exhausted")
        remaining -= et.t
        cur_t -= et.t
        x = et.x
        n = outward_normal(domain, x)
        dot = float(v @ n)
        if abs(dot) <= TOL_GRAZE * np.linalg.norm(v):
            raise RuntimeError("grazing rebound encountered")
        v = v - 2.0 * dot * n
        chain.hits.append((cur_t, _wrap_tangential(domain, x), v.copy()))


def classify_phase_point(domain: Domain, x, v):
    """'interior', or a BoundaryPhasePoint classified by the sign of v.n."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    val, grad = domain.xi(x)
    scale = max(1.0, float(np.max(np.abs(grad))))
    if val < -TOL_BOUNDARY * scale:
        return "interior"
    if val > TOL_BOUNDARY * scale:
        raise ValueError("outside domain")
    n = grad / np.linalg.norm(grad)
    dot = float(v @ n)
    if dot > TOL_GRAZE:
        klass = "outgoing"
    elif dot < -TOL_GRAZE:
        klass = "incoming"
    else:
        klass = "grazing"
    return BoundaryPhasePoint(x=x, v=v, dot=dot, klass=klass)
