"""Selection-Gaussian distributions: construction, truncated sampling and
Rao-Blackwellized marginal densities.

A selection-Gaussian field is ``r = [r_tilde | nu in A]`` where
``(r_tilde, nu)`` is jointly Gaussian and ``A`` is a separable set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from . import _truncnorm
from .forward import GridSpec
from .gaussian import (
    GaussianDist,
    IntervalUnion,
    SelectionSet,
    conditional_map,
    jittered_cholesky,
    sample,
    symmetrize,
)


class ChainInitError(RuntimeError):
    """No starting point inside the selection set could be found."""


@dataclass(frozen=True)
class StationaryFieldSpec:
    grid: GridSpec
    mean_level: float
    std_level: float
    corr_range: float

    def __post_init__(self):
        if not self.std_level > 0 or not self.corr_range > 0:
            raise ValueError("std_level and corr_range must be positive")


def build_stationary_field(spec: StationaryFieldSpec) -> GaussianDist:
    """Gaussian field with squared-exponential correlation ``exp(-tau^2 / delta^2)``."""
    xy = spec.grid.coords()
    corr = np.exp(-cdist(xy, xy, "sqeuclidean") / spec.corr_range**2)
    cov = spec.std_level**2 * corr
    jittered_cholesky(cov)  # raises if not PSD within jitter
    return GaussianDist(np.full(spec.grid.n, float(spec.mean_level)), cov)


@dataclass(frozen=True)
class CaseCoupling:
    """Node-wise coupling ``nu_i = gamma * z_i + sqrt(1 - gamma^2) * eps_i``.

    With ``standardized=True`` (default) ``z = (r_tilde - mu) / sigma`` so that
    every ``nu_i`` has unit variance; with ``standardized=False``
    ``z = r_tilde - mu`` as in the unscaled block formula.
    """

    gamma: float
    standardized: bool = True

    def __post_init__(self):
        if not -1.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [-1, 1]")


@dataclass(frozen=True, eq=False)
class SelectionGaussianParams:
    base: GaussianDist
    aux_mean: np.ndarray
    coupling: np.ndarray
    aux_noise_cov: np.ndarray
    selection: SelectionSet

    def __post_init__(self):
        q, n = np.shape(self.coupling)
        if n != self.base.dim:
            raise ValueError("coupling columns must match base dimension")
        if np.shape(self.aux_mean) != (q,) or np.shape(self.aux_noise_cov) != (q, q):
            raise ValueError("auxiliary mean / noise covariance have wrong shape")
        if self.selection.dim != q:
            raise ValueError(f"selection set has dimension {self.selection.dim}, coupling has {q} rows")

    @property
    def n(self) -> int:
        return self.base.dim

    @property
    def q(self) -> int:
        return len(self.aux_mean)

    def joint(self) -> GaussianDist:
        """Gaussian over ``(r_tilde, nu)``."""
        s = self.base.cov
        g = np.asarray(self.coupling, float)
        cross = s @ g.T
        aux = symmetrize(g @ cross + self.aux_noise_cov)
        cov = np.block([[s, cross], [cross.T, aux]])
        return GaussianDist(np.concatenate([self.base.mean, self.aux_mean]), cov)

    @classmethod
    def from_case(cls, base: GaussianDist, coupling: CaseCoupling, selection: SelectionSet):
        n = base.dim
        gamma = coupling.gamma
        scale = _case_scale(base, coupling)
        return cls(base, np.zeros(n), gamma / scale * np.eye(n), (1 - gamma**2) * np.eye(n), selection)


def _case_scale(base: GaussianDist, coupling: CaseCoupling) -> float:
    return float(np.sqrt(np.mean(np.diag(base.cov)))) if coupling.standardized else 1.0


def couple_case_auxiliary(base: GaussianDist, coupling: CaseCoupling) -> GaussianDist:
    """Joint ``(r_tilde, nu)`` for the node-wise coupling; ``nu`` has mean zero."""
    n = base.dim
    gamma = coupling.gamma
    scale = _case_scale(base, coupling)
    cross = gamma / scale * base.cov
    aux = (gamma / scale) ** 2 * base.cov + (1 - gamma**2) * np.eye(n)
    mean = np.concatenate([base.mean, np.zeros(n)])
    return GaussianDist(mean, symmetrize(np.block([[base.cov, cross], [cross.T, aux]])))


@dataclass(frozen=True)
class ChainConfig:
    n_samples: int = 1000
    burn_in: int = 1000
    thinning: int = 10
    block_size: int = 10
    seed: int = 0
    inner_sweeps: int = 1

    def __post_init__(self):
        for name in ("n_samples", "burn_in", "thinning", "block_size", "inner_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class AuxSampleSet:
    draws: np.ndarray

    def __len__(self):
        return self.draws.shape[0]


def _initial_point(aux: GaussianDist, a: SelectionSet, rng) -> np.ndarray:
    start = np.array([u.project(m) for u, m in zip(a.per_coordinate, aux.mean)])
    if a.contains(start):
        return start
    for _ in range(10_000):
        cand = aux.mean + rng.standard_normal(aux.dim) * aux.std
        if a.contains(cand):
            return cand
    raise ChainInitError("could not find a starting point inside the selection set")


def gibbs_truncated(aux: GaussianDist, a: SelectionSet, cfg: ChainConfig = ChainConfig()) -> AuxSampleSet:
    """Sample ``nu ~ aux`` conditioned on ``nu in a``.

    Blocked Gibbs: coordinates are visited in contiguous blocks of
    ``cfg.block_size``; inside a block each coordinate is redrawn
    ``cfg.inner_sweeps`` times from its exact full conditional, truncated to
    its interval union by inverse CDF.  After ``burn_in`` sweeps one state is
    kept every ``thinning`` sweeps.
    """
    if a.dim != aux.dim:
        raise ValueError(f"selection set dimension {a.dim} differs from auxiliary dimension {aux.dim}")
    q = aux.dim
    rng = np.random.default_rng(cfg.seed)
    start = _initial_point(aux, a, rng)
    chol = jittered_cholesky(aux.cov)
    if np.any(np.diag(chol) <= 0.0):
        raise np.linalg.LinAlgError("auxiliary covariance is singular")
    prec = linalg.cho_solve((chol, True), np.eye(q), check_finite=False)
    prec = np.ascontiguousarray(symmetrize(prec))
    lo, hi, ptr = a.flat()
    bs = min(cfg.block_size, q)
    starts = np.append(np.arange(0, q, bs), q).astype(np.int64)
    n_sweeps = cfg.burn_in + cfg.n_samples * cfg.thinning
    draws = _truncnorm.gibbs_sweeps(
        start.astype(float), np.ascontiguousarray(aux.mean, dtype=float), prec, lo, hi, ptr, starts,
        cfg.inner_sweeps, n_sweeps, cfg.thinning, cfg.n_samples, int(rng.integers(0, 2**31 - 1)),
    )
    if not np.all(a.contains(draws)):
        raise AssertionError("sampler produced a draw outside the selection set")
    return AuxSampleSet(draws)


def sample_selection_gaussian(p: SelectionGaussianParams, cfg: ChainConfig = ChainConfig()) -> np.ndarray:
    """Realizations of the selection-Gaussian field, shape (n_samples, n).

    Each retained ``nu`` draw is followed by one exact draw of ``r_tilde | nu``.
    """
    joint = p.joint()
    n, q = p.n, p.q
    aux = GaussianDist(joint.mean[n:], joint.cov[n:, n:])
    nu = gibbs_truncated(aux, p.selection, cfg).draws
    _, gain, cond_cov = conditional_map(joint, np.arange(n, n + q))
    means = joint.mean[:n] + (nu - joint.mean[n:]) @ gain.T
    noise = sample(GaussianDist(np.zeros(n), cond_cov), len(nu), seed=np.random.default_rng(cfg.seed).integers(2**31) + 1)
    return means + noise


class MixtureDensity:
    """Equal-weight mixture of univariate Gaussians sharing one variance."""

    def __init__(self, means, sd: float):
        self.means = np.asarray(means, dtype=float).reshape(-1)
        if self.means.size == 0:
            raise ValueError("mixture needs at least one component")
        if not sd > 0:
            raise ValueError("component standard deviation must be positive")
        self.sd = float(sd)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        out = np.empty(flat.size)
        norm = 1.0 / (self.sd * np.sqrt(2 * np.pi) * self.means.size)
        chunk = max(1, 2_000_000 // self.means.size)
        for k in range(0, flat.size, chunk):
            z = (flat[k:k + chunk, None] - self.means[None, :]) / self.sd
            out[k:k + chunk] = np.exp(-0.5 * z * z).sum(axis=1) * norm
        return out.reshape(x.shape)

    def support(self, width: float = 4.0) -> tuple[float, float]:
        return float(self.means.min() - width * self.sd), float(self.means.max() + width * self.sd)

    def mean(self) -> float:
        return float(self.means.mean())


def marginal_mixture_density(node: int, nu_draws: AuxSampleSet, joint: GaussianDist) -> MixtureDensity:
    """Rao-Blackwellized density of ``r_node`` given ``nu in A``.

    ``joint`` is the Gaussian over ``(r, nu)`` (possibly already conditioned on
    data); the density averages the exact Gaussian ``r_node | nu_s`` over draws.
    """
    draws = nu_draws.draws if isinstance(nu_draws, AuxSampleSet) else np.asarray(nu_draws)
    if draws.ndim != 2 or draws.shape[0] == 0:
        raise ValueError("need a non-empty (n_draws, q) sample set")
    q = draws.shape[1]
    n = joint.dim - q
    if not 0 <= node < n:
        raise IndexError(f"node {node} outside field of {n} nodes")
    sub = np.concatenate([[node], np.arange(n, n + q)])
    small = GaussianDist(joint.mean[sub], joint.cov[np.ix_(sub, sub)])
    _, gain, cond_cov = conditional_map(small, np.arange(1, q + 1))
    means = small.mean[0] + (draws - small.mean[1:]) @ gain[0]
    return MixtureDensity(means, np.sqrt(max(cond_cov[0, 0], 0.0)))


def case_selection_set(q: int, lower_cut: float = -0.2, upper_cut: float = 0.5) -> SelectionSet:
    """``((-inf, lower_cut] U [upper_cut, inf))^q``."""
    return SelectionSet.repeated(IntervalUnion(((-np.inf, lower_cut), (upper_cut, np.inf))), q)
