"""Phase-space grids and fields.

Two spatial discretizations back everything:

* slab: the unit interval [0, 1] in x1 split into nx equal finite-volume
  cells (the two tangential directions are homogeneous and carried
  implicitly), field shape (nx, N);
* ball / ellipsoid: a cube lattice of cell centers masked to the domain
  interior, field shape (M, N) over the M inside centers.

Velocity always lives on a VelocityGrid (flat index last).
"""

import numpy as np

from .geometry import Domain
from .kernels import VelocityGrid


class PhaseGrid:
    """Spatial cells x velocity lattice for one domain."""

    def __init__(self, domain, vgrid, nx):
        self.domain = domain
        self.vgrid = vgrid
        self.nx = int(nx)
        if domain.kind == "slab":
            self.dx = 1.0 / self.nx
            self.centers = np.zeros((self.nx, 3))
            self.centers[:, 0] = (np.arange(self.nx) + 0.5) * self.dx
            self.cell_volumes = np.full(self.nx, self.dx)
            self.n_cells = self.nx
            self.cube_index = None
        else:
            # cube of nx^3 cells bounding the domain, masked to the interior
            c, rads = domain.center, self._radii()
            axes = [c[d] - rads[d] + (np.arange(self.nx) + 0.5) * (2 * rads[d] / self.nx)
                    for d in range(3)]
            g = np.meshgrid(*axes, indexing="ij")
            cube = np.stack(g, axis=-1).reshape(-1, 3)
            inside = np.array([domain.inside(p) for p in cube])
            self.x_axes = axes
            self.x_steps = np.array([2 * rads[d] / self.nx for d in range(3)])
            self.centers = np.ascontiguousarray(cube[inside])
            self.n_cells = self.centers.shape[0]
            vol = float(np.prod(self.x_steps))
            self.cell_volumes = np.full(self.n_cells, vol)
            self.cube_index = np.full(self.nx ** 3, -1, dtype=np.int64)
            self.cube_index[np.flatnonzero(inside)] = np.arange(self.n_cells)

    def _radii(self):
        d = self.domain
        if d.kind == "ball":
            return np.full(3, d.params[0])
        if d.kind == "ellipsoid":
            return np.asarray(d.params, float)
        raise ValueError(f"unsupported domain kind {d.kind!r}")

    @property
    def volume(self):
        return float(np.sum(self.cell_volumes))

    def zeros(self):
        return np.zeros((self.n_cells, self.vgrid.size))

    def maxwellian(self):
        """The field F = mu, constant in x."""
        return np.broadcast_to(self.vgrid.mu, (self.n_cells, self.vgrid.size)).copy()

    # -- global moments ------------------------------------------------------

    def mass(self, data):
        return float(self.cell_volumes @ np.sum(data, axis=1)) * self.vgrid.w

    def momentum(self, data):
        return (self.cell_volumes @ (data @ self.vgrid.nodes)) * self.vgrid.w

    def energy(self, data):
        return float(self.cell_volumes @ (data @ self.vgrid.speed ** 2)) * self.vgrid.w

    def angular_momentum(self, data, axis=2):
        """Angular momentum about a symmetry axis through the domain center
        (diagnostic for the ball): int (x - c) x v F dx dv, one component."""
        rel = self.centers - self.domain.center
        a, b = {0: (1, 2), 1: (2, 0), 2: (0, 1)}[axis]
        vv = self.vgrid.nodes
        term = (rel[:, a, None] * vv[None, :, b] - rel[:, b, None] * vv[None, :, a])
        return float(self.cell_volumes @ np.sum(term * data, axis=1)) * self.vgrid.w

    def weighted_sup(self, data, m_vals):
        return float(np.max(np.abs(data) * m_vals))


class PhaseField:
    """A field on a PhaseGrid; thin wrapper carrying grid metadata so the
    transport/solver/projection entry points can be called with one object."""

    __slots__ = ("pg", "data")

    def __init__(self, pg, data=None):
        self.pg = pg
        self.data = pg.zeros() if data is None else np.asarray(data, float)
        if self.data.shape != (pg.n_cells, pg.vgrid.size):
            raise ValueError("field shape does not match the phase grid")

    # duck-typed attributes used by kernels.project_PiG
    @property
    def vgrid(self):
        return self.pg.vgrid

    @property
    def cell_volumes(self):
        return self.pg.cell_volumes

    def copy(self):
        return PhaseField(self.pg, self.data.copy())


def slab_grid(vgrid, nx):
    return PhaseGrid(Domain.slab(), vgrid, nx)


def ball_grid(vgrid, nx, radius=1.0):
    return PhaseGrid(Domain.ball(radius=radius), vgrid, nx)
