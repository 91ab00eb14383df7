"""Joint-moment recursions for the traditional and the selection Kalman models.

Both models share one propagation loop.  At every time step the likelihood
blocks are formed from the current state blocks, then the state blocks are
pushed one step forward with ``A_t``.  The selection model carries one extra
family of cross-covariances, ``Cov(r_t, nu)``, through the same loop.

Two storage modes exist.  ``"full"`` keeps every block of the space-time
joint of ``(r_0..r_{T+1}, nu, d_0..d_T)``.  ``"targeted"`` keeps only what is
needed for the joint of ``(r_0, nu, d_0..d_T)``, i.e. a matrix of size
``n + q + m(T+1)`` instead of ``n(T+2) + q + m(T+1)``.  Shared blocks are
computed by identical floating-point operations in the two modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .gaussian import GaussianDist, conditional_map, condition, marginalize, symmetrize

FULL_MODE_CAP = 5000


class MemoryGuardError(MemoryError):
    """Full-mode storage would exceed the configured cap."""


@dataclass(frozen=True, eq=False)
class ProcessModel:
    """Gauss-linear dynamics ``r_{t+1} = A_t r_t + e`` and likelihood ``d_t = H r_t + e``.

    ``forward`` is a single (n, n) matrix (time invariant) or a sequence of
    ``horizon + 1`` matrices.  ``dyn_noise_cov=None`` means exact dynamics.
    """

    forward: Union[np.ndarray, Sequence[np.ndarray]]
    obs_matrix: np.ndarray
    obs_noise_cov: np.ndarray
    horizon: int
    dyn_noise_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        f = self.forward
        if isinstance(f, np.ndarray) and f.ndim == 2:
            f = np.array(f, dtype=float)
            f.setflags(write=False)
            object.__setattr__(self, "forward", f)
        else:
            mats = tuple(np.array(a, dtype=float) for a in f)
            if len(mats) < self.horizon + 1:
                raise ValueError(f"need {self.horizon + 1} forward matrices, got {len(mats)}")
            object.__setattr__(self, "forward", mats)
        h = np.atleast_2d(np.array(self.obs_matrix, dtype=float))
        if h.size == 0:
            h = h.reshape(0, self.n)
        object.__setattr__(self, "obs_matrix", h)
        object.__setattr__(self, "obs_noise_cov", np.array(self.obs_noise_cov, dtype=float).reshape(h.shape[0], h.shape[0]))
        n = self.n
        for t in range(self.horizon + 1):
            if self.forward_at(t).shape != (n, n):
                raise ValueError("forward matrices must be square and of equal size")
        if h.shape[1] != n:
            raise ValueError(f"observation matrix has {h.shape[1]} columns, state has {n}")
        if self.dyn_noise_cov is not None:
            q = np.array(self.dyn_noise_cov, dtype=float)
            if q.shape != (n, n):
                raise ValueError("dynamic noise covariance has wrong shape")
            object.__setattr__(self, "dyn_noise_cov", None if not np.any(q) else q)
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")

    @property
    def n(self) -> int:
        f = self.forward
        return f.shape[0] if isinstance(f, np.ndarray) else f[0].shape[0]

    @property
    def m(self) -> int:
        return self.obs_matrix.shape[0]

    def forward_at(self, t: int) -> np.ndarray:
        return self.forward if isinstance(self.forward, np.ndarray) else self.forward[t]

    def with_horizon(self, horizon: int) -> "ProcessModel":
        return ProcessModel(self.forward, self.obs_matrix, self.obs_noise_cov, horizon, self.dyn_noise_cov)


@dataclass(eq=False)
class JointMoments:
    """Block moments of the full space-time joint.

    ``cov_rr[(t, s)]`` for ``s <= t``, ``cov_rd[(t, s)]`` = Cov(r_t, d_s) for
    ``s <= t``, ``cov_dd[(t, s)]`` for ``s <= t``, ``cov_rnu[t]`` =
    Cov(r_t, nu), ``cov_dnu[t]`` = Cov(d_t, nu).  The ``nu`` entries are
    ``None`` for the traditional model.
    """

    horizon: int
    mean_r: list
    mean_d: list
    cov_rr: dict
    cov_rd: dict
    cov_dd: dict
    mean_nu: Optional[np.ndarray] = None
    cov_nunu: Optional[np.ndarray] = None
    cov_rnu: Optional[list] = None
    cov_dnu: Optional[list] = None
    obs_matrix: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.mean_r[0].size

    @property
    def q(self) -> int:
        return 0 if self.mean_nu is None else self.mean_nu.size

    @property
    def m(self) -> int:
        return self.mean_d[0].size

    def rr(self, t: int, s: int) -> np.ndarray:
        return self.cov_rr[(t, s)] if s <= t else self.cov_rr[(s, t)].T

    def dd(self, t: int, s: int) -> np.ndarray:
        return self.cov_dd[(t, s)] if s <= t else self.cov_dd[(s, t)].T

    def rd(self, t: int, s: int) -> np.ndarray:
        """Cov(r_t, d_s) for any pair."""
        if s <= t:
            return self.cov_rd[(t, s)]
        return (self.obs_matrix @ self.cov_rr[(s, t)]).T

    def assemble(self) -> GaussianDist:
        """Joint over ``(r_0, ..., r_{T+1}, nu, d_0, ..., d_T)``."""
        T, n, q, m = self.horizon, self.n, self.q, self.m
        nr = n * (T + 2)
        dim = nr + q + m * (T + 1)
        mean = np.concatenate(self.mean_r + ([self.mean_nu] if q else []) + self.mean_d)
        cov = np.zeros((dim, dim))
        rs = [slice(t * n, (t + 1) * n) for t in range(T + 2)]
        ds = [slice(nr + q + t * m, nr + q + (t + 1) * m) for t in range(T + 1)]
        for t in range(T + 2):
            for s in range(t + 1):
                cov[rs[t], rs[s]] = self.cov_rr[(t, s)]
                cov[rs[s], rs[t]] = self.cov_rr[(t, s)].T
            for s in range(T + 1):
                block = self.rd(t, s)
                cov[rs[t], ds[s]] = block
                cov[ds[s], rs[t]] = block.T
        for t in range(T + 1):
            for s in range(t + 1):
                cov[ds[t], ds[s]] = self.cov_dd[(t, s)]
                cov[ds[s], ds[t]] = self.cov_dd[(t, s)].T
        if q:
            nus = slice(nr, nr + q)
            cov[nus, nus] = self.cov_nunu
            for t in range(T + 2):
                cov[rs[t], nus] = self.cov_rnu[t]
                cov[nus, rs[t]] = self.cov_rnu[t].T
            for t in range(T + 1):
                cov[ds[t], nus] = self.cov_dnu[t]
                cov[nus, ds[t]] = self.cov_dnu[t].T
        return GaussianDist(mean, cov)


@dataclass(frozen=True, eq=False)
class TargetedJoint:
    """Gaussian over ``(r_0, nu, d_0..d_T)``; ``q == 0`` for the traditional model."""

    dist: GaussianDist
    n: int
    q: int
    m: int
    horizon: int

    @property
    def data_index(self) -> np.ndarray:
        return np.arange(self.n + self.q, self.dist.dim)


def _recurse(mean0, cov0, cov_rnu0, mean_nu, cov_nunu, pm: ProcessModel, full: bool):
    T = pm.horizon
    h = pm.obs_matrix
    q = 0 if cov_rnu0 is None else cov_rnu0.shape[1]

    mean_r = [np.asarray(mean0, float)]
    mean_d = []
    # state blocks: Cov(r_t, r_s); targeted keeps only s in {0, t}
    rr_now = {0: np.asarray(cov0, float)}
    rr_all = {(0, 0): rr_now[0]}
    rd_now = {}  # Cov(r_t, d_s) for s <= t
    rd_all = {}
    dd = {}
    rnu = [cov_rnu0] if q else None
    dnu = [] if q else None
    r0_d = []

    for t in range(T + 1):
        a = pm.forward_at(t)
        s_tt = rr_now[t]
        # likelihood model
        mean_d.append(h @ mean_r[t])
        rd_now[t] = s_tt @ h.T
        for s in range(t + 1):
            dd[(t, s)] = h @ rd_now[s]
        dd[(t, t)] = h @ s_tt @ h.T + pm.obs_noise_cov
        # Cov(r_0, d_t), formed exactly as JointMoments.rd forms it
        r0_d.append(rd_now[0] if t == 0 else (h @ rr_now[0]).T)
        if q:
            dnu.append(h @ rnu[t])
        if full:
            for s in range(t + 1):
                rd_all[(t, s)] = rd_now[s]
        # forwarding model
        mean_r.append(a @ mean_r[t])
        nxt = {s: a @ rr_now[s] for s in rr_now}
        s_next = a @ s_tt @ a.T
        if pm.dyn_noise_cov is not None:
            s_next = s_next + pm.dyn_noise_cov
        nxt[t + 1] = symmetrize(s_next)
        if full:
            for s in range(t + 1):
                rr_all[(t + 1, s)] = nxt[s]
            rr_all[(t + 1, t + 1)] = nxt[t + 1]
        else:
            nxt = {s: nxt[s] for s in (0, t + 1)}
        rr_now = nxt
        rd_now = {s: a @ rd_now[s] for s in rd_now}
        if q:
            rnu.append(a @ rnu[t])
    if full:
        for s in range(T + 1):
            rd_all[(T + 1, s)] = rd_now[s]
    return dict(mean_r=mean_r, mean_d=mean_d, rr_all=rr_all, rd_all=rd_all, dd=dd,
                rnu=rnu, dnu=dnu, r0_d=r0_d, cov00=np.asarray(cov0, float), mean_nu=mean_nu,
                cov_nunu=cov_nunu, q=q)


def _full_dim(pm: ProcessModel, q: int) -> int:
    return pm.n * (pm.horizon + 2) + q + pm.m * (pm.horizon + 1)


def _package(res, pm: ProcessModel, full: bool):
    q, T, n, m = res["q"], pm.horizon, pm.n, pm.m
    if full:
        return JointMoments(
            horizon=T, mean_r=res["mean_r"], mean_d=res["mean_d"], cov_rr=res["rr_all"],
            cov_rd=res["rd_all"], cov_dd=res["dd"], mean_nu=res["mean_nu"] if q else None,
            cov_nunu=res["cov_nunu"] if q else None, cov_rnu=res["rnu"], cov_dnu=res["dnu"],
            obs_matrix=pm.obs_matrix,
        )
    dim = n + q + m * (T + 1)
    mean = np.concatenate([res["mean_r"][0]] + ([res["mean_nu"]] if q else []) + res["mean_d"])
    cov = np.zeros((dim, dim))
    cov[:n, :n] = res["cov00"]
    off = n + q
    ds = [slice(off + t * m, off + (t + 1) * m) for t in range(T + 1)]
    for t in range(T + 1):
        cov[:n, ds[t]] = res["r0_d"][t]
        cov[ds[t], :n] = res["r0_d"][t].T
        for s in range(t + 1):
            cov[ds[t], ds[s]] = res["dd"][(t, s)]
            cov[ds[s], ds[t]] = res["dd"][(t, s)].T
    if q:
        nus = slice(n, n + q)
        cov[:n, nus] = res["rnu"][0]
        cov[nus, :n] = res["rnu"][0].T
        cov[nus, nus] = res["cov_nunu"]
        for t in range(T + 1):
            cov[ds[t], nus] = res["dnu"][t]
            cov[nus, ds[t]] = res["dnu"][t].T
    return TargetedJoint(GaussianDist(mean, cov), n, q, m, T)


def run_traditional(init: GaussianDist, pm: ProcessModel, mode: str = "targeted", cap: int = FULL_MODE_CAP):
    """Joint Gaussian of states and data under a Gaussian initial state."""
    if init.dim != pm.n:
        raise ValueError(f"initial dimension {init.dim} does not match process model n={pm.n}")
    full = _check_mode(mode, pm, 0, cap)
    res = _recurse(init.mean, init.cov, None, None, None, pm, full)
    return _package(res, pm, full)


def run_selection(init_joint: GaussianDist, pm: ProcessModel, mode: str = "targeted", cap: int = FULL_MODE_CAP):
    """Joint Gaussian of states, auxiliary variable and data.

    ``init_joint`` is the Gaussian over ``(r_0, nu)`` with ``r_0`` first.
    """
    n = pm.n
    q = init_joint.dim - n
    if q <= 0:
        raise ValueError(f"initial joint of dimension {init_joint.dim} has no auxiliary block for n={n}")
    full = _check_mode(mode, pm, q, cap)
    mu, s = init_joint.mean, init_joint.cov
    res = _recurse(mu[:n], s[:n, :n], s[:n, n:], mu[n:].copy(), s[n:, n:].copy(), pm, full)
    return _package(res, pm, full)


def _check_mode(mode: str, pm: ProcessModel, q: int, cap: int) -> bool:
    if mode not in ("full", "targeted"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "full" and _full_dim(pm, q) > cap:
        raise MemoryGuardError(
            f"full joint of dimension {_full_dim(pm, q)} exceeds cap {cap}; use mode='targeted'"
        )
    return mode == "full"


def _check_data(tj: TargetedJoint, d) -> np.ndarray:
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.size != tj.m * (tj.horizon + 1):
        raise ValueError(f"expected {tj.m * (tj.horizon + 1)} data values, got {d.size}")
    return d


def posterior_r0_traditional(tj: TargetedJoint, d) -> GaussianDist:
    if tj.q != 0:
        raise ValueError("targeted joint carries an auxiliary block; use posterior_r0_selection")
    d = _check_data(tj, d)
    if d.size == 0:
        return marginalize(tj.dist, np.arange(tj.n))
    return condition(tj.dist, tj.data_index, d)


@dataclass(frozen=True, eq=False)
class SelectionPosterior:
    """Posterior of ``r_0`` under the selection model, represented by samples
    of the truncated auxiliary variable and the exact Gaussian ``r_0 | nu, d``.

    ``r_0 | nu, d ~ N(r_mean + gain @ (nu - nu_mean), cond_cov)``.
    """

    nu_draws: np.ndarray
    r_mean: np.ndarray
    nu_mean: np.ndarray
    gain: np.ndarray
    cond_cov: np.ndarray
    nu_posterior: GaussianDist

    @property
    def n(self) -> int:
        return self.r_mean.size

    def component_means(self) -> np.ndarray:
        """(n_draws, n) conditional means of ``r_0`` for every retained draw."""
        return self.r_mean + (self.nu_draws - self.nu_mean) @ self.gain.T

    def component_sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cond_cov), 0.0, None))

    def mean(self) -> np.ndarray:
        return self.component_means().mean(axis=0)

    def realizations(self, n_real: int, seed=None) -> np.ndarray:
        """Draws of ``r_0``: a retained ``nu`` draw, then an exact Gaussian draw."""
        from .gaussian import jittered_cholesky

        rng = np.random.default_rng(seed)
        pick = rng.integers(0, self.nu_draws.shape[0], size=n_real)
        means = self.r_mean + (self.nu_draws[pick] - self.nu_mean) @ self.gain.T
        chol = jittered_cholesky(self.cond_cov)
        return means + rng.standard_normal((n_real, self.n)) @ chol.T


def posterior_r0_selection(tj: TargetedJoint, d, a, cfg) -> SelectionPosterior:
    """Condition ``(r_0, nu)`` on the data, then sample ``nu`` restricted to ``a``."""
    from .selection import gibbs_truncated

    if tj.q == 0:
        raise ValueError("targeted joint has no auxiliary block")
    d = _check_data(tj, d)
    n, q = tj.n, tj.q
    if d.size:
        post = condition(tj.dist, tj.data_index, d)
    else:
        post = marginalize(tj.dist, np.arange(n + q))
    nu_post = marginalize(post, np.arange(n, n + q))
    _, gain, cond_cov = conditional_map(post, np.arange(n, n + q))
    draws = gibbs_truncated(nu_post, a, cfg).draws
    return SelectionPosterior(
        nu_draws=draws, r_mean=post.mean[:n].copy(), nu_mean=post.mean[n:].copy(),
        gain=gain, cond_cov=symmetrize(cond_cov), nu_posterior=nu_post,
    )
