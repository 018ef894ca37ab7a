"""Weight families m(v) and the weighted norms used by the solver and the
acceptance checks: sup norms L^inf_{x,v}(m), the mixed L^1_v L^inf_x(m),
the energy norm L^2_{x,v}(mu^{-1/2}), and a boundary sup diagnostic.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import kq_star


@dataclass(frozen=True)
class Weight:
    """m(v) from one of three families:

    * stretch_exp: m = exp(kappa |v|^alpha), kappa > 0, alpha in (0, 2].
      The decay theorems use alpha < 2 strictly; alpha = 2 is allowed here
      because the embedding comparisons against the Guo weight need it.
    * polynomial: m = <v>^k = (1+|v|^2)^{k/2}, k >= 0.
    * guo: m = <v>^beta mu^{-1/2}, beta >= 0 (default 5).
    """

    kind: str
    kappa: float = 0.0
    alpha: float = 1.0
    k: float = 0.0
    beta: float = 5.0

    def __post_init__(self):
        if self.kind == "stretch_exp":
            if not (self.kappa > 0 and 0 < self.alpha <= 2):
                raise ValueError("stretch_exp needs kappa > 0 and alpha in (0, 2]")
        elif self.kind == "polynomial":
            if self.k < 0:
                raise ValueError("polynomial weight needs k >= 0")
        elif self.kind == "guo":
            if self.beta < 0:
                raise ValueError("guo weight needs beta >= 0")
        else:
            raise ValueError(f"unknown weight kind {self.kind!r}")

    @staticmethod
    def stretch_exp(kappa, alpha):
        return Weight("stretch_exp", kappa=float(kappa), alpha=float(alpha))

    @staticmethod
    def polynomial(k):
        return Weight("polynomial", k=float(k))

    @staticmethod
    def guo(beta=5.0):
        return Weight("guo", beta=float(beta))

    def evaluate(self, v):
        v = np.asarray(v, float)
        s2 = np.sum(v * v, axis=-1)
        if self.kind == "stretch_exp":
            return np.exp(self.kappa * s2 ** (self.alpha / 2.0))
        if self.kind == "polynomial":
            return (1.0 + s2) ** (self.k / 2.0)
        # guo: <v>^beta mu^{-1/2}
        return (1.0 + s2) ** (self.beta / 2.0) * (2 * np.pi) ** 0.75 * np.exp(s2 / 4.0)

    def admissible(self, q, gamma=1.0, b_inf=1.0, l_b=4.0 * np.pi):
        """For polynomial weights: k above the critical exponent k_q*.
        Stretch-exp weights are admissible for every q; guo is handled by
        its own embedding."""
        if self.kind != "polynomial":
            return True
        return self.k > kq_star(q, gamma, b_inf, l_b)

    def admissible_mixed(self, gamma=1.0):
        """k > 5 + gamma, the mixed-norm (L^1_v L^inf_x) requirement."""
        if self.kind != "polynomial":
            return True
        return self.k > 5.0 + gamma


@dataclass
class NormReport:
    value: float
    norm_tag: str
    truncation_mass: float
    flagged: bool = False
    notes: dict = field(default_factory=dict, repr=False)


NORM_TAGS = ("Linf_xv_m", "L1v_Linfx_m", "L2_mu", "Linf_boundary_m")


def _field_parts(f, pg):
    if pg is None:
        pg = f.pg
        data = f.data
    else:
        data = np.asarray(getattr(f, "data", f), float)
    return pg, np.atleast_2d(data)


def norm(f, m, norm_tag, pg=None):
    """Weighted norm of a phase field; returns a NormReport.

    f is a PhaseField, or an array (n_cells, N) with pg supplied.
    """
    if norm_tag not in NORM_TAGS:
        raise ValueError(f"unknown norm tag {norm_tag!r}")
    pg, data = _field_parts(f, pg)
    vg = pg.vgrid
    m_vals = m.evaluate(vg.nodes)
    trunc = float(1.0 - np.sum(vg.mu) * vg.w)
    absf = np.abs(data)
    if norm_tag == "Linf_xv_m":
        value = float(np.max(absf * m_vals))
    elif norm_tag == "L1v_Linfx_m":
        value = float(np.sum(np.max(absf, axis=0) * m_vals) * vg.w)
    elif norm_tag == "L2_mu":
        value = float(
            np.sqrt(np.sum(pg.cell_volumes @ (data * data / vg.mu)) * vg.w)
        )
    else:  # Linf_boundary_m: wall-adjacent cells only
        if pg.domain.kind == "slab":
            sel = np.zeros(pg.n_cells, bool)
            sel[[0, -1]] = True
        else:
            r = np.linalg.norm(pg.centers - pg.domain.center, axis=1)
            sel = r >= np.max(r) - np.max(getattr(pg, "x_steps", [0.0]))
        value = float(np.max(absf[sel] * m_vals)) if np.any(sel) else 0.0
    flagged = False
    if m.kind == "guo" and norm_tag in ("Linf_xv_m", "L1v_Linfx_m"):
        # decay check: the weighted sup must not be attained on the outer
        # speed shell (f decaying slower than mu^{1/2} makes |f| m blow up
        # toward the lattice edge).
        wsup = np.max(absf, axis=0) * m_vals
        outer = vg.speed >= vg.vmax - vg.h
        inner_max = float(np.max(wsup[~outer])) if np.any(~outer) else 0.0
        outer_max = float(np.max(wsup[outer])) if np.any(outer) else 0.0
        flagged = outer_max > max(inner_max, 1e-300)
    return NormReport(value=value, norm_tag=norm_tag, truncation_mass=trunc,
                      flagged=flagged)


def embed_check(m, guo_weight):
    """True iff L^inf(guo) embeds into L^inf(m): sup m / (<v>^beta mu^{-1/2})
    finite.  Polynomials and stretch-exponentials with alpha < 2 always
    embed; alpha = 2 embeds iff kappa <= 1/4 (the Gaussian exponent of
    mu^{-1/2} is |v|^2/4)."""
    if guo_weight.kind != "guo":
        raise ValueError("second argument must be a guo weight")
    if m.kind in ("polynomial", "guo"):
        return True
    if m.alpha < 2.0:
        return True
    return m.kappa <= 0.25
