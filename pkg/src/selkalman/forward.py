"""Implicit finite-difference advection-diffusion propagator on a regular grid.

Nodes are flattened row-major: node ``(i, j)`` (``i`` along x, ``j`` along y)
has index ``j * nx + i`` and coordinates ``(i * dx, j * dx)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import splu


@dataclass(frozen=True)
class GridSpec:
    nx: int = 21
    ny: int = 21
    dx: float = 0.1

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one node per axis")
        if not self.dx > 0:
            raise ValueError("dx must be positive")

    @property
    def n(self) -> int:
        return self.nx * self.ny

    def index(self, i: int, j: int) -> int:
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise IndexError(f"node ({i}, {j}) outside {self.nx}x{self.ny} grid")
        return j * self.nx + i

    def coords(self) -> np.ndarray:
        """(n, 2) array of node coordinates in flattening order."""
        jj, ii = np.divmod(np.arange(self.n), self.nx)
        return np.column_stack([ii * self.dx, jj * self.dx])

    def to_image(self, field) -> np.ndarray:
        """Reshape a flat field to (ny, nx); row 0 is y = 0."""
        return np.asarray(field).reshape(self.ny, self.nx)


@dataclass(frozen=True)
class AdvectionDiffusionParams:
    diffusivity: float = 1.43e-2
    velocity: tuple[float, float] = (0.0, -0.1)
    dt: float = 0.5

    def __post_init__(self):
        if self.diffusivity < 0:
            raise ValueError("diffusivity must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "velocity", tuple(float(c) for c in self.velocity))


@dataclass(frozen=True)
class ObservationLayout:
    sites: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))
        if len(set(self.sites)) != len(self.sites):
            raise ValueError("observation sites must be distinct")

    @classmethod
    def from_nodes(cls, grid: GridSpec, nodes: Sequence[tuple[int, int]]) -> "ObservationLayout":
        return cls(tuple(grid.index(i, j) for i, j in nodes))

    @property
    def m(self) -> int:
        return len(self.sites)


FIVE_SPOT = ((5, 5), (15, 5), (10, 10), (5, 15), (15, 15))


def spatial_operator(grid: GridSpec, params: AdvectionDiffusionParams, include_advection: bool = True):
    """Sparse operator ``L`` with ``dr/dt = L r``.

    Five-point Laplacian scaled by ``lambda / dx**2`` plus the one-sided
    advection term ``-c * (r[+1] - r) / dx`` along each axis.  Zero-flux
    boundaries: a neighbour across the boundary takes the value of the
    boundary node itself (ghost node mirrored about the cell face).  Every row
    of ``L`` sums to zero, so constants are fixed points; without advection
    ``L`` is symmetric and the field total is conserved as well.
    """
    nx, ny, dx = grid.nx, grid.ny, grid.dx
    lam = params.diffusivity / dx**2
    c1, c2 = params.velocity if include_advection else (0.0, 0.0)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        if v != 0.0:
            rows.append(r)
            cols.append(c)
            vals.append(v)

    for j in range(ny):
        for i in range(nx):
            k = j * nx + i
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < nx and 0 <= jj < ny:
                    add(k, jj * nx + ii, lam)
                    add(k, k, -lam)
            # forward difference; a ghost equal to r_k contributes nothing
            if i + 1 < nx:
                add(k, k + 1, -c1 / dx)
                add(k, k, c1 / dx)
            if j + 1 < ny:
                add(k, k + nx, -c2 / dx)
                add(k, k, c2 / dx)
    return sparse.csc_matrix((vals, (rows, cols)), shape=(grid.n, grid.n))


def implicit_matrix(grid: GridSpec, params: AdvectionDiffusionParams, include_advection: bool = True):
    """``M = I - dt * L``; one implicit step solves ``M r_next = r``."""
    return sparse.identity(grid.n, format="csc") - params.dt * spatial_operator(grid, params, include_advection)


def assemble_propagator(grid: GridSpec, params: AdvectionDiffusionParams) -> np.ndarray:
    """Dense one-step propagator ``A = M^{-1}``."""
    m = implicit_matrix(grid, params)
    try:
        lu = splu(m.tocsc())
    except RuntimeError as exc:
        raise linalg.LinAlgError(f"implicit operator is singular: {exc}") from exc
    a = lu.solve(np.eye(grid.n))
    if not np.all(np.isfinite(a)):
        raise linalg.LinAlgError("implicit operator is singular")
    return a


def build_observation_matrix(grid: GridSpec, layout: ObservationLayout) -> np.ndarray:
    h = np.zeros((layout.m, grid.n))
    for k, site in enumerate(layout.sites):
        if not 0 <= site < grid.n:
            raise IndexError(f"site {site} outside grid of {grid.n} nodes")
        h[k, site] = 1.0
    return h


@dataclass(frozen=True)
class Simulation:
    states: np.ndarray  # (T + 2, n): r_0 .. r_{T+1}
    observations: np.ndarray  # (T + 1, m): d_0 .. d_T


def simulate_truth(r0, pm, horizon: int, seed=None) -> Simulation:
    """Propagate ``r0`` with the exact dynamics of ``pm`` and observe with noise.

    ``r_{t+1} = A_t r_t`` (no model error) and
    ``d_t = H r_t + e_t`` with ``e_t ~ N(0, obs_noise_cov)``.
    """
    rng = np.random.default_rng(seed)
    r = np.asarray(r0, dtype=float).copy()
    if r.size != pm.n:
        raise ValueError("initial field does not match process model")
    chol = np.linalg.cholesky(pm.obs_noise_cov) if np.any(pm.obs_noise_cov) else np.zeros((pm.m, pm.m))
    states = [r]
    obs = []
    for t in range(horizon + 1):
        obs.append(pm.obs_matrix @ states[-1] + chol @ rng.standard_normal(pm.m))
        states.append(pm.forward_at(t) @ states[-1])
    return Simulation(np.array(states), np.array(obs).reshape(horizon + 1, pm.m))
