"""Numba kernels for univariate normals truncated to a union of segments.

Segments are passed as two flat arrays ``lo`` and ``hi`` (closed intervals,
``-inf``/``+inf`` allowed).  All kernels work on the standardized variable and
take care to evaluate tail masses on the side where they are accurate.
"""

import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation for the normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


@njit(cache=True)
def norm_cdf(x):
    return 0.5 * math.erfc(-x / SQRT2)


@njit(cache=True)
def norm_ppf(p):
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # one Halley refinement brings the error to machine precision
    e = norm_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@njit(cache=True)
def segment_mass(a, b):
    """P(a <= Z <= b) for standard normal Z, accurate in both tails."""
    if a > 0.0:
        return norm_cdf(-a) - norm_cdf(-b)
    return norm_cdf(b) - norm_cdf(a)


@njit(cache=True)
def union_mass(lo, hi, mean, sd):
    total = 0.0
    for k in range(lo.shape[0]):
        total += segment_mass((lo[k] - mean) / sd, (hi[k] - mean) / sd)
    return total


@njit(cache=True)
def _sample_segment(a, b, u):
    if a > 0.0:
        pa = norm_cdf(-a)
        p = pa - u * (pa - norm_cdf(-b))
        x = -norm_ppf(p)
    else:
        pa = norm_cdf(a)
        p = pa + u * (norm_cdf(b) - pa)
        x = norm_ppf(p)
    if x < a:
        x = a
    if x > b:
        x = b
    return x


@njit(cache=True)
def sample_union(lo, hi, mean, sd, u1, u2):
    """Draw from N(mean, sd^2) restricted to the union of [lo_k, hi_k].

    ``u1`` picks the segment, ``u2`` drives the inverse CDF inside it.
    Returns the draw and the total mass of the union under N(mean, sd^2).
    """
    nseg = lo.shape[0]
    if sd <= 0.0:
        # degenerate conditional: project the mean onto the nearest segment
        best = mean
        dist = np.inf
        for k in range(nseg):
            x = min(max(mean, lo[k]), hi[k])
            if abs(x - mean) < dist:
                dist = abs(x - mean)
                best = x
        return best, 1.0 if dist == 0.0 else 0.0
    masses = np.empty(nseg)
    total = 0.0
    for k in range(nseg):
        masses[k] = segment_mass((lo[k] - mean) / sd, (hi[k] - mean) / sd)
        total += masses[k]
    if total <= 1e-300:
        # every segment is far in a tail; use the exponential tail approximation
        # on the nearest segment
        best = 0
        dist = np.inf
        for k in range(nseg):
            a = (lo[k] - mean) / sd
            b = (hi[k] - mean) / sd
            d = a if a > 0.0 else (-b if b < 0.0 else 0.0)
            if d < dist:
                dist = d
                best = k
        a = (lo[best] - mean) / sd
        b = (hi[best] - mean) / sd
        e = -math.log(1.0 - u2)
        if a > 0.0:
            z = min(a + e / a, b)
        else:
            z = max(b - e / abs(b), a)
        return mean + sd * z, 0.0
    target = u1 * total
    acc = 0.0
    pick = nseg - 1
    for k in range(nseg):
        acc += masses[k]
        if target < acc and masses[k] > 0.0:
            pick = k
            break
    while masses[pick] <= 0.0:
        pick -= 1
    z = _sample_segment((lo[pick] - mean) / sd, (hi[pick] - mean) / sd, u2)
    x = mean + sd * z
    # guard the closed boundaries against round-off in mean + sd * z
    if x < lo[pick]:
        x = lo[pick]
    if x > hi[pick]:
        x = hi[pick]
    return x, total


@njit(cache=True)
def ghk_weights(mean, chol, lo, hi, seg_ptr, uniforms):
    """Separation-of-variables importance weights for P(x in prod_i A_i).

    ``seg_ptr[i]:seg_ptr[i+1]`` indexes the segments of coordinate ``i``.
    ``uniforms`` has shape (n_draws, k, 2).
    """
    n_draws = uniforms.shape[0]
    k = mean.shape[0]
    w = np.ones(n_draws)
    z = np.empty(k)
    for s in range(n_draws):
        weight = 1.0
        for i in range(k):
            c = mean[i]
            for j in range(i):
                c += chol[i, j] * z[j]
            sd = chol[i, i]
            seg_lo = lo[seg_ptr[i]:seg_ptr[i + 1]]
            seg_hi = hi[seg_ptr[i]:seg_ptr[i + 1]]
            x, mass = sample_union(seg_lo, seg_hi, c, sd, uniforms[s, i, 0], uniforms[s, i, 1])
            weight *= mass
            if weight == 0.0:
                break
            z[i] = (x - c) / sd if sd > 0.0 else 0.0
        w[s] = weight
    return w


@njit(cache=True)
def gibbs_sweeps(nu, mean, prec, lo, hi, seg_ptr, block_starts, inner_sweeps,
                 n_sweeps, keep_every, n_keep, uniforms_seed):
    """Run a blocked single-site Gibbs sampler for N(mean, prec^-1) truncated to
    a separable set.

    The residual ``w = prec @ (nu - mean)`` is kept up to date so every
    coordinate update costs O(q).  Draws are recorded after every
    ``keep_every``-th sweep once ``n_sweeps - n_keep * keep_every`` burn-in
    sweeps are done.
    """
    np.random.seed(uniforms_seed)
    q = nu.shape[0]
    out = np.empty((n_keep, q))
    w = prec @ (nu - mean)
    burn = n_sweeps - n_keep * keep_every
    kept = 0
    n_blocks = block_starts.shape[0] - 1
    for sweep in range(n_sweeps):
        for b in range(n_blocks):
            for _ in range(inner_sweeps):
                for i in range(block_starts[b], block_starts[b + 1]):
                    pii = prec[i, i]
                    dev = nu[i] - mean[i]
                    cmean = mean[i] + dev - w[i] / pii
                    csd = 1.0 / math.sqrt(pii)
                    x, _m = sample_union(lo[seg_ptr[i]:seg_ptr[i + 1]], hi[seg_ptr[i]:seg_ptr[i + 1]],
                                         cmean, csd, np.random.random(), np.random.random())
                    delta = x - nu[i]
                    if delta != 0.0:
                        for j in range(q):
                            w[j] += prec[j, i] * delta
                        nu[i] = x
        if sweep >= burn and (sweep - burn + 1) % keep_every == 0:
            out[kept] = nu
            kept += 1
    return out
