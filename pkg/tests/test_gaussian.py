import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from selkalman.gaussian import (
    GaussianDist,
    IntervalUnion,
    NumericalError,
    RectConfig,
    SelectionSet,
    condition,
    jittered_cholesky,
    log_density,
    marginalize,
    rect_probability,
    sample,
)

from conftest import random_spd

ORTHANT = SelectionSet.repeated(IntervalUnion(((0.0, np.inf),)), 2)


def bivariate(rho):
    return GaussianDist(np.zeros(2), np.array([[1.0, rho], [rho, 1.0]]))


def test_marginalize_identity_and_extraction():
    g = GaussianDist([1.0, 2.0], [[4.0, 1.0], [1.0, 9.0]])
    same = marginalize(g, [0, 1])
    np.testing.assert_array_equal(same.mean, g.mean)
    np.testing.assert_array_equal(same.cov, g.cov)
    one = marginalize(g, [1])
    np.testing.assert_array_equal(one.mean, [2.0])
    np.testing.assert_array_equal(one.cov, [[9.0]])


def test_marginalize_rejects_bad_indices():
    g = GaussianDist(np.zeros(3), np.eye(3))
    with pytest.raises(IndexError):
        marginalize(g, [3])
    with pytest.raises(ValueError):
        marginalize(g, [])
    with pytest.raises(ValueError):
        marginalize(g, [1, 1])


def test_marginal_of_marginal_equals_direct(rng):
    g = GaussianDist(rng.standard_normal(5), random_spd(rng, 5))
    step = marginalize(marginalize(g, [4, 0, 2, 3]), [1, 3])
    direct = marginalize(g, [0, 3])
    np.testing.assert_array_equal(step.mean, direct.mean)
    np.testing.assert_array_equal(step.cov, direct.cov)


def test_condition_independent_blocks():
    cov = np.array([[2.0, 0.3, 0, 0], [0.3, 1.0, 0, 0], [0, 0, 3.0, 0.5], [0, 0, 0.5, 1.0]])
    g = GaussianDist([1.0, 2.0, 3.0, 4.0], cov)
    c = condition(g, [2, 3], [10.0, -5.0])
    np.testing.assert_allclose(c.mean, [1.0, 2.0], atol=1e-14)
    np.testing.assert_allclose(c.cov, cov[:2, :2], atol=1e-14)


def test_condition_bivariate_closed_form():
    c = condition(bivariate(0.5), [1], [1.0])
    # E = rho * x2, Var = 1 - rho^2
    assert c.mean[0] == pytest.approx(0.5, abs=1e-14)
    assert c.cov[0, 0] == pytest.approx(0.75, abs=1e-14)


def test_sequential_conditioning_equals_joint(rng):
    g = GaussianDist(rng.standard_normal(4), random_spd(rng, 4))
    v = rng.standard_normal(2)
    joint = condition(g, [2, 3], v)
    seq = condition(condition(g, [2], v[:1]), [2], v[1:])
    np.testing.assert_allclose(seq.mean, joint.mean, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(seq.cov, joint.cov, rtol=1e-10, atol=1e-12)


def test_condition_singular_block_raises():
    g = GaussianDist(np.zeros(2), np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(NumericalError):
        condition(g, [1], [0.0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-5, 5))
def test_conditional_cov_does_not_depend_on_values(seed, shift):
    rng = np.random.default_rng(seed)
    g = GaussianDist(rng.standard_normal(5), random_spd(rng, 5))
    v = rng.standard_normal(2)
    a = condition(g, [1, 4], v)
    b = condition(g, [1, 4], v + shift)
    np.testing.assert_array_equal(a.cov, b.cov)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_marginalize_and_condition_commute(seed):
    rng = np.random.default_rng(seed)
    g = GaussianDist(rng.standard_normal(6), random_spd(rng, 6))
    v = rng.standard_normal(2)
    # observe coordinates 4, 5; keep 0, 2 among the rest
    a = marginalize(condition(g, [4, 5], v), [0, 2])
    b = condition(marginalize(g, [0, 2, 4, 5]), [2, 3], v)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(a.cov, b.cov, rtol=1e-10, atol=1e-10)


def test_operations_leave_inputs_unmodified(rng):
    mean, cov = rng.standard_normal(4), random_spd(rng, 4)
    g = GaussianDist(mean, cov)
    before = (g.mean.copy(), g.cov.copy())
    condition(g, [0], [1.0])
    marginalize(g, [1, 2])
    sample(g, 10, 0)
    log_density(g, np.zeros(4))
    rect_probability(g, SelectionSet.repeated(IntervalUnion(((0.0, np.inf),)), 4), RectConfig(100))
    np.testing.assert_array_equal(g.mean, before[0])
    np.testing.assert_array_equal(g.cov, before[1])
    with pytest.raises(ValueError):
        g.mean[0] = 3.0


def test_rect_probability_full_space():
    g = GaussianDist(np.zeros(3), np.eye(3))
    est = rect_probability(g, SelectionSet.repeated(IntervalUnion.real_line(), 3))
    assert est.probability == 1.0 and est.std_error == 0.0


def test_rect_probability_independent_quadrant():
    est = rect_probability(bivariate(0.0), ORTHANT, RectConfig(20_000, seed=1))
    # with rho = 0 the first coordinate is weighted exactly by 1/2, the second by 1/2
    assert est.probability == pytest.approx(0.25, abs=3 * est.std_error + 1e-12)


def test_rect_probability_correlated_orthant():
    oracle = 0.25 + math.asin(0.5) / (2 * math.pi)
    quad, _ = integrate.dblquad(lambda y, x: stats.multivariate_normal.pdf([x, y], cov=[[1, 0.5], [0.5, 1]]),
                                0, 10, 0, 10)
    assert quad == pytest.approx(oracle, abs=1e-7)
    est = rect_probability(bivariate(0.5), ORTHANT, RectConfig(10_000, seed=7))
    assert abs(est.probability - oracle) < 3 * est.std_error
    assert est.std_error < 0.01


def test_rect_probability_union_segments_against_scipy():
    g = GaussianDist([0.3, -0.2, 0.1], [[1.0, 0.4, 0.1], [0.4, 1.5, -0.3], [0.1, -0.3, 0.8]])
    union = IntervalUnion(((-np.inf, -0.2), (0.5, np.inf)))
    a = SelectionSet.repeated(union, 3)
    # oracle: inclusion-exclusion over the 2^3 boxes with scipy's CDF
    mvn = stats.multivariate_normal(g.mean, g.cov)
    total = 0.0
    for mask in range(8):
        lo = np.array([0.5 if mask >> k & 1 else -np.inf for k in range(3)])
        hi = np.array([np.inf if mask >> k & 1 else -0.2 for k in range(3)])
        # P(lo <= x <= hi) by sign flips for upper-tail coordinates
        flip = np.array([-1.0 if mask >> k & 1 else 1.0 for k in range(3)])
        total += stats.multivariate_normal(flip * g.mean, np.outer(flip, flip) * g.cov).cdf(
            np.where(flip < 0, -lo, hi))
    est = rect_probability(g, a, RectConfig(20_000, seed=3))
    assert abs(est.probability - total) < 3 * est.std_error + 1e-4


@settings(max_examples=15, deadline=None)
@given(cut=st.floats(-1.0, 1.0), extra=st.floats(0.05, 2.0))
def test_rect_probability_monotone(cut, extra):
    g = bivariate(0.3)
    small = SelectionSet.repeated(IntervalUnion(((cut, np.inf),)), 2)
    big = SelectionSet((IntervalUnion(((cut - extra, np.inf),)), IntervalUnion(((cut, np.inf),))))
    a = rect_probability(g, small, RectConfig(4000, seed=11))
    b = rect_probability(g, big, RectConfig(4000, seed=12))
    assert b.probability >= a.probability - 3 * math.hypot(a.std_error, b.std_error)


def test_rect_probability_dimension_check():
    with pytest.raises(ValueError):
        rect_probability(bivariate(0.1), SelectionSet.repeated(IntervalUnion.real_line(), 3))


def test_sample_degenerate_and_deterministic():
    g = GaussianDist([1.0, -2.0], np.zeros((2, 2)))
    np.testing.assert_array_equal(sample(g, 5, 0), np.tile([1.0, -2.0], (5, 1)))
    h = GaussianDist(np.zeros(3), np.eye(3))
    np.testing.assert_array_equal(sample(h, 50, 42), sample(h, 50, 42))


def test_sample_clt_bound():
    x = sample(GaussianDist(np.zeros(3), np.eye(3)), 100_000, seed=5)
    assert x.shape == (100_000, 3)
    assert np.all(np.abs(x.mean(axis=0)) < 4 / math.sqrt(1e5))


def test_sample_indefinite_raises():
    with pytest.raises(NumericalError):
        sample(GaussianDist(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]]), 3, 0)


def test_log_density_values():
    g = GaussianDist([0.0], [[1.0]])
    assert log_density(g, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-14)
    x = np.linspace(-12, 12, 24001)
    dens = np.exp([log_density(g, [v]) for v in x])
    assert integrate.trapezoid(dens, x) == pytest.approx(1.0, abs=1e-6)


def test_log_density_symmetry_and_scipy(rng):
    g = GaussianDist(rng.standard_normal(4), random_spd(rng, 4))
    x = rng.standard_normal(4)
    assert log_density(g, x) == pytest.approx(log_density(g, 2 * g.mean - x), rel=1e-12)
    assert log_density(g, x) == pytest.approx(stats.multivariate_normal(g.mean, g.cov).logpdf(x), rel=1e-10)


def test_jitter_rescues_rank_deficient():
    v = np.array([[1.0], [2.0], [3.0]])
    chol = jittered_cholesky(v @ v.T)
    np.testing.assert_allclose(chol @ chol.T, v @ v.T, atol=1e-6)


def test_interval_union_validation_and_membership():
    u = IntervalUnion(((-np.inf, -0.2), (0.5, np.inf)))
    np.testing.assert_array_equal(u.contains([-0.2, 0.0, 0.5, 3.0]), [True, False, True, True])
    assert u.project(0.1) == -0.2 and u.project(0.4) == 0.5
    with pytest.raises(ValueError):
        IntervalUnion(((0.0, 1.0), (0.5, 2.0)))
    with pytest.raises(ValueError):
        IntervalUnion(((1.0, 1.0),))
