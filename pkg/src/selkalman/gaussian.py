"""Finite-dimensional Gaussian machinery.

Everything here is a pure function of its inputs.  Covariances pass through
:func:`jittered_cholesky`, which symmetrizes and adds an escalating diagonal
jitter so that round-off accumulated in long recursions never aborts a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from . import _truncnorm

JITTER_START = 1e-12
JITTER_STOP = 1e-8


class NumericalError(ArithmeticError):
    """A covariance could not be factorized even after maximal jitter."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


def jittered_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``cov`` with escalating diagonal jitter.

    The jitter starts at ``1e-12 * mean(diag)`` and grows by factors of ten up
    to ``1e-8 * mean(diag)``.  An all-zero matrix returns a zero factor.
    """
    cov = symmetrize(np.asarray(cov, dtype=float))
    k = cov.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    if not np.any(cov):
        return np.zeros_like(cov)
    scale = float(np.mean(np.diag(cov)))
    if not np.isfinite(scale) or scale <= 0.0:
        raise NumericalError("covariance has non-positive mean diagonal")
    try:
        return linalg.cholesky(cov, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    eye = np.eye(k)
    jitter = JITTER_START
    while jitter <= JITTER_STOP * (1 + 1e-9):
        try:
            return linalg.cholesky(cov + jitter * scale * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(f"covariance of size {k} is not positive semi-definite within jitter")


@dataclass(frozen=True, eq=False)
class GaussianDist:
    """Multivariate Gaussian with mean vector and covariance matrix.

    Arrays are copied and made read-only on construction.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean).reshape(-1)
        cov = _frozen(self.cov)
        if cov.ndim != 2 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        scale = max(float(np.max(np.abs(cov))) if cov.size else 0.0, 1e-300)
        if cov.size and np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass(frozen=True)
class IntervalUnion:
    """Sorted, disjoint union of closed segments ``[lower, upper]``."""

    segments: tuple[tuple[float, float], ...]

    def __post_init__(self):
        segs = tuple((float(a), float(b)) for a, b in self.segments)
        if not segs:
            raise ValueError("an interval union needs at least one segment")
        for a, b in segs:
            if not a < b:
                raise ValueError(f"segment ({a}, {b}) must have lower < upper")
        for (_, b0), (a1, _) in zip(segs, segs[1:]):
            if not b0 < a1:
                raise ValueError("segments must be sorted and disjoint")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def real_line(cls) -> "IntervalUnion":
        return cls(((-np.inf, np.inf),))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.segments:
            inside |= (x >= a) & (x <= b)
        return inside

    def project(self, x: float) -> float:
        """Nearest point of the union to ``x``."""
        best, dist = x, np.inf
        for a, b in self.segments:
            y = min(max(x, a), b)
            if abs(y - x) < dist:
                best, dist = y, abs(y - x)
        return best

    @property
    def is_real_line(self) -> bool:
        return self.segments == ((-np.inf, np.inf),)


@dataclass(frozen=True)
class SelectionSet:
    """Separable selection set: a product of per-coordinate interval unions."""

    per_coordinate: tuple[IntervalUnion, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_coordinate", tuple(self.per_coordinate))

    @classmethod
    def repeated(cls, union: IntervalUnion, q: int) -> "SelectionSet":
        return cls((union,) * q)

    @property
    def dim(self) -> int:
        return len(self.per_coordinate)

    def contains(self, x) -> np.ndarray:
        """Row-wise membership for an array of shape (..., q)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected last axis {self.dim}, got {x.shape[-1]}")
        ok = np.ones(x.shape[:-1], dtype=bool)
        for i, u in enumerate(self.per_coordinate):
            ok &= u.contains(x[..., i])
        return ok

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Segment bounds flattened for the numba kernels: (lo, hi, ptr)."""
        lo, hi, ptr = [], [], [0]
        for u in self.per_coordinate:
            for a, b in u.segments:
                lo.append(a)
                hi.append(b)
            ptr.append(len(lo))
        return np.array(lo, float), np.array(hi, float), np.array(ptr, np.int64)


def _check_indices(idx, k: int, allow_empty: bool = False) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size == 0 and not allow_empty:
        raise ValueError("index set must be non-empty")
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise IndexError(f"index out of range for dimension {k}")
    if np.unique(idx).size != idx.size:
        raise ValueError("indices must be distinct")
    return idx


def marginalize(g: GaussianDist, keep: Sequence[int]) -> GaussianDist:
    keep = _check_indices(keep, g.dim)
    return GaussianDist(g.mean[keep], g.cov[np.ix_(keep, keep)])


def conditional_map(g: GaussianDist, obs_idx: Sequence[int]):
    """Linear regression of the unobserved block on the observed block.

    Returns ``(keep, gain, cond_cov)`` such that the conditional law given
    ``x[obs_idx] = v`` is ``N(mean[keep] + gain @ (v - mean[obs_idx]), cond_cov)``.
    """
    obs = _check_indices(obs_idx, g.dim, allow_empty=True)
    keep = np.setdiff1d(np.arange(g.dim), obs)
    if obs.size == 0:
        return keep, np.zeros((keep.size, 0)), g.cov[np.ix_(keep, keep)].copy()
    s_oo = g.cov[np.ix_(obs, obs)]
    s_ko = g.cov[np.ix_(keep, obs)]
    chol = jittered_cholesky(s_oo)
    if np.any(np.diag(chol) <= 0.0):
        raise NumericalError("observed covariance block is singular")
    gain = linalg.cho_solve((chol, True), s_ko.T, check_finite=False).T
    cond_cov = symmetrize(g.cov[np.ix_(keep, keep)] - gain @ s_ko.T)
    return keep, gain, cond_cov


def condition(g: GaussianDist, obs_idx: Sequence[int], obs_val) -> GaussianDist:
    """Gaussian conditional of the remaining coordinates given ``x[obs_idx] = obs_val``."""
    obs = _check_indices(obs_idx, g.dim)
    obs_val = np.asarray(obs_val, dtype=float).reshape(-1)
    if obs_val.size != obs.size:
        raise ValueError("obs_val length must match obs_idx")
    keep, gain, cond_cov = conditional_map(g, obs)
    mean = g.mean[keep] + gain @ (obs_val - g.mean[obs])
    return GaussianDist(mean, cond_cov)


def sample(g: GaussianDist, n_draws: int, seed=None) -> np.ndarray:
    """Draws of shape (n_draws, k)."""
    rng = np.random.default_rng(seed)
    chol = jittered_cholesky(g.cov)
    z = rng.standard_normal((n_draws, g.dim))
    return g.mean + z @ chol.T


def log_density(g: GaussianDist, x) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != g.dim:
        raise ValueError("dimension mismatch")
    chol = jittered_cholesky(g.cov)
    diag = np.diag(chol)
    if np.any(diag <= 0.0):
        raise NumericalError("singular covariance has no density")
    z = linalg.solve_triangular(chol, x - g.mean, lower=True, check_finite=False)
    return float(-0.5 * z @ z - np.sum(np.log(diag)) - 0.5 * g.dim * np.log(2 * np.pi))


@dataclass(frozen=True)
class RectConfig:
    n_samples: int = 10_000
    seed: int = 0


@dataclass(frozen=True)
class RectEstimate:
    probability: float
    std_error: float
    n_samples: int = field(default=0)


def rect_probability(g: GaussianDist, a: SelectionSet, cfg: RectConfig = RectConfig()) -> RectEstimate:
    """Monte Carlo estimate of P(x in A) by sequential conditioning.

    Coordinate ``i`` is drawn from its Cholesky conditional restricted to
    ``A_i``; the importance weight is the product of the restricted masses
    (separation-of-variables estimator).  Unbiased, with the standard error
    of the weight mean.
    """
    if a.dim != g.dim:
        raise ValueError(f"selection set has dimension {a.dim}, distribution {g.dim}")
    if all(u.is_real_line for u in a.per_coordinate):
        return RectEstimate(1.0, 0.0, cfg.n_samples)
    chol = jittered_cholesky(g.cov)
    lo, hi, ptr = a.flat()
    rng = np.random.default_rng(cfg.seed)
    uniforms = rng.random((cfg.n_samples, g.dim, 2))
    w = _truncnorm.ghk_weights(np.ascontiguousarray(g.mean), np.ascontiguousarray(chol), lo, hi, ptr, uniforms)
    p = float(np.mean(w))
    se = float(np.std(w, ddof=1) / np.sqrt(w.size)) if w.size > 1 else 0.0
    return RectEstimate(min(max(p, 0.0), 1.0), se, cfg.n_samples)
