"""Posterior summaries: gridded marginal densities, MMAP maps, HDI bands, RMSE."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate, stats

from .gaussian import GaussianDist, IntervalUnion, sample
from .recursion import SelectionPosterior
from .selection import MixtureDensity


class ResolutionError(ValueError):
    """The value grid is too coarse to reach the requested HDI mass."""


@dataclass(frozen=True, eq=False)
class MarginalDensity:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValueError("grid and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(values < 0):
            raise ValueError("density values must be non-negative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_evaluator(cls, f: Callable, lower: float, upper: float, resolution: int = 512) -> "MarginalDensity":
        x = np.linspace(lower, upper, resolution)
        return cls(x, f(x))

    @classmethod
    def gaussian(cls, mean: float, sd: float, resolution: int = 512, width: float = 4.0) -> "MarginalDensity":
        x = np.linspace(mean - width * sd, mean + width * sd, resolution)
        return cls(x, stats.norm.pdf(x, mean, sd))

    def total_mass(self) -> float:
        return float(integrate.trapezoid(self.values, self.grid))

    def mass_between(self, lower: float, upper: float) -> float:
        """Integral of the piecewise-linear interpolant over ``[lower, upper]``."""
        lower = max(lower, self.grid[0])
        upper = min(upper, self.grid[-1])
        if upper <= lower:
            return 0.0
        inner = (self.grid > lower) & (self.grid < upper)
        x = np.concatenate([[lower], self.grid[inner], [upper]])
        y = np.interp(x, self.grid, self.values)
        return float(integrate.trapezoid(y, x))


@dataclass(frozen=True)
class HdiBand:
    mass: float
    intervals: IntervalUnion
    covered: float

    @property
    def n_intervals(self) -> int:
        return len(self.intervals.segments)


@dataclass(eq=False)
class PosteriorSummary:
    mmap: np.ndarray
    densities: dict = field(default_factory=dict)
    hdi: dict = field(default_factory=dict)
    realizations: Optional[np.ndarray] = None


def mmap(density: MarginalDensity) -> float:
    """Grid argmax of the density; ties go to the lowest value."""
    return float(density.grid[int(np.argmax(density.values))])


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth must have the same shape")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return list(zip(starts.tolist(), ends.tolist()))


def _segments(density: MarginalDensity, mask: np.ndarray) -> list[tuple[float, float]]:
    # a run covers its grid points plus half a cell on each side
    x = density.grid
    segs = []
    for a, b in _runs(mask):
        lo = x[0] if a == 0 else 0.5 * (x[a - 1] + x[a])
        hi = x[-1] if b == x.size - 1 else 0.5 * (x[b] + x[b + 1])
        segs.append((lo, hi))
    return segs


def _covered(density: MarginalDensity, segs) -> float:
    return sum(density.mass_between(a, b) for a, b in segs)


def hdi(density: MarginalDensity, mass: float = 0.8, tol: float = 0.01, iterations: int = 60) -> HdiBand:
    """Highest-density region ``{r : f(r) >= c}`` holding ``mass``.

    The level ``c`` is found by bisection; covered mass is the integral of the
    piecewise-linear density over the returned segments.  On a flat plateau
    at the final level, plateau points are released from the upper end until
    the mass fits.
    """
    if not 0.0 < mass < 1.0:
        raise ValueError("mass must lie in (0, 1)")
    f = density.values
    lo_c, hi_c = 0.0, float(f.max())
    for _ in range(iterations):
        mid = 0.5 * (lo_c + hi_c)
        if _covered(density, _segments(density, f >= mid)) >= mass:
            lo_c = mid
        else:
            hi_c = mid
    mask = f >= lo_c
    segs = _segments(density, mask)
    covered = _covered(density, segs)
    if covered - mass > tol:
        plateau = np.flatnonzero(mask & (f <= lo_c * (1 + 1e-9) + 1e-300))
        for k in plateau[::-1]:
            trial = mask.copy()
            trial[k] = False
            segs_t = _segments(density, trial)
            cov_t = _covered(density, segs_t)
            if cov_t < mass - tol:
                break
            mask, segs, covered = trial, segs_t, cov_t
            if covered - mass <= tol:
                break
    if abs(covered - mass) > tol or not segs:
        raise ResolutionError(f"covered mass {covered:.4f} misses target {mass} by more than {tol}")
    return HdiBand(mass, IntervalUnion(tuple(segs)), covered)


def _node_densities(post, resolution: int, width: float):
    """Yield ``(node, MarginalDensity)`` for every node of the posterior."""
    if isinstance(post, GaussianDist):
        for i, (m, s) in enumerate(zip(post.mean, post.std)):
            yield i, MarginalDensity.gaussian(m, s, resolution, width)
    elif isinstance(post, SelectionPosterior):
        means = post.component_means()
        sd = post.component_sd()
        for i in range(post.n):
            mix = MixtureDensity(means[:, i], sd[i])
            lo, hi = mix.support(width)
            yield i, MarginalDensity.from_evaluator(mix, lo, hi, resolution)
    else:
        raise TypeError(f"cannot summarize {type(post).__name__}")


def summarize_posterior(
    post: Union[GaussianDist, SelectionPosterior],
    nodes: Optional[Sequence[int]] = None,
    resolution: int = 512,
    hdi_mass: float = 0.8,
    n_real: int = 100,
    seed=None,
    width: float = 4.0,
) -> PosteriorSummary:
    """MMAP map over all nodes plus densities and HDI bands at ``nodes``.

    ``nodes=None`` keeps densities and bands for every node.
    """
    keep = None if nodes is None else {int(i) for i in nodes}
    n = post.dim if isinstance(post, GaussianDist) else post.n
    pred = np.empty(n)
    summary = PosteriorSummary(pred)
    for i, dens in _node_densities(post, resolution, width):
        pred[i] = mmap(dens)
        if keep is None or i in keep:
            summary.densities[i] = dens
            summary.hdi[i] = hdi(dens, hdi_mass)
    if n_real:
        if isinstance(post, GaussianDist):
            summary.realizations = sample(post, n_real, seed)
        else:
            summary.realizations = post.realizations(n_real, seed)
    return summary
