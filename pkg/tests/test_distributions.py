import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from barcode_jsdm.distributions import (
    beta_draw,
    dirichlet_draw,
    gamma_draw,
    log_categorical_draw,
    make_rng,
    multinomial_draw,
    truncated_normal_draw,
)


def test_gamma_mean_small_shape():
    x = gamma_draw(0.5, 0.5, make_rng(1), size=1_000_000)
    assert abs(x.mean() - 1.0) < 0.01
    assert np.all(x > 0)


def test_gamma_variance():
    x = gamma_draw(2.0, 1.0, make_rng(2), size=1_000_000)
    assert abs(x.var() - 2.0) < 0.05


def test_gamma_skewness_positive():
    x = gamma_draw(0.5, 2.0, make_rng(3), size=1_000_000)
    assert stats.skew(x) > 0


def test_gamma_distribution_ks():
    # shape below one goes through the boosting branch
    x = gamma_draw(0.3, 2.0, make_rng(4), size=50_000)
    assert stats.kstest(x, stats.gamma(0.3, scale=0.5).cdf).pvalue > 0.001


@pytest.mark.parametrize("shape, rate", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0), (np.inf, 1.0)])
def test_gamma_rejects_bad_parameters(shape, rate):
    with pytest.raises(ValueError):
        gamma_draw(shape, rate, make_rng(0))


def test_multinomial_single_support():
    assert multinomial_draw(7, [0, 5, 0], make_rng(0)).tolist() == [0, 7, 0]


def test_multinomial_zero_total():
    assert multinomial_draw(0, [1.0, 2.0], make_rng(0)).tolist() == [0, 0]


def test_multinomial_all_zero_weights():
    with pytest.raises(ValueError):
        multinomial_draw(3, [0.0, 0.0], make_rng(0))


@pytest.mark.parametrize("total", [3, 40])
def test_multinomial_pmf_chisquare(total):
    # both the small-total and the sequential-binomial paths
    rng = make_rng(5)
    w = np.array([2.0, 1.0])
    draws = np.array([multinomial_draw(total, w, rng)[0] for _ in range(100_000)])
    obs = np.bincount(draws, minlength=total + 1)
    exp = stats.binom.pmf(np.arange(total + 1), total, 2 / 3) * draws.size
    keep = exp > 5
    chi2 = np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep])
    assert chi2 < stats.chi2.ppf(0.99, keep.sum() - 1)


@settings(max_examples=60, deadline=None)
@given(total=st.integers(0, 500),
       w=st.lists(st.floats(0, 10), min_size=1, max_size=8).filter(lambda v: sum(v) > 0),
       seed=st.integers(0, 2**32 - 1))
def test_multinomial_sums_to_total(total, w, seed):
    out = multinomial_draw(total, w, make_rng(seed))
    assert out.sum() == total
    assert np.all(out[np.asarray(w) == 0] == 0)


def test_truncated_normal_half_normal_mean():
    x = truncated_normal_draw(0.0, "above", make_rng(6), size=1_000_000)
    assert np.all(x > 0)
    assert abs(x.mean() - math.sqrt(2 / math.pi)) < 0.01


def test_truncated_normal_negligible_truncation():
    x = truncated_normal_draw(5.0, "above", make_rng(7), size=200_000)
    assert abs(x.mean() - 5.0) < 0.01


@pytest.mark.parametrize("mean, side", [(-5.0, "above"), (-40.0, "above"), (5.0, "below"), (40.0, "below")])
def test_truncated_normal_far_tail(mean, side):
    x = truncated_normal_draw(mean, side, make_rng(8), size=10_000)
    assert np.all(np.isfinite(x))
    assert np.all(x > 0) if side == "above" else np.all(x <= 0)
    # the truncated tail mean is close to the boundary
    assert abs(x.mean()) < 1.0 / abs(mean) + 0.05


def test_truncated_normal_tail_ks():
    mean = -2.0
    x = truncated_normal_draw(mean, "above", make_rng(9), size=50_000)
    ref = stats.truncnorm(-mean, np.inf, loc=mean)
    assert stats.kstest(x, ref.cdf).pvalue > 0.001


def test_log_categorical_skips_minus_inf():
    rng = make_rng(0)
    assert all(log_categorical_draw([-np.inf, 0.0], rng) == 1 for _ in range(1000))


def test_log_categorical_all_inadmissible():
    with pytest.raises(ValueError):
        log_categorical_draw([-np.inf, -np.inf], make_rng(0))


@pytest.mark.parametrize("lw, p1", [([0.0, 0.0], 0.5), ([0.0, math.log(3)], 0.75)])
def test_log_categorical_frequencies(lw, p1):
    rng = make_rng(10)
    f = np.mean([log_categorical_draw(lw, rng) for _ in range(100_000)])
    assert abs(f - p1) < 0.005


@settings(max_examples=30, deadline=None)
@given(lw=st.lists(st.floats(-20, 20), min_size=2, max_size=6), shift=st.sampled_from([-700.0, -3.0, 5.0, 800.0]),
       seed=st.integers(0, 2**31))
def test_log_categorical_shift_invariance(lw, shift, seed):
    a = [log_categorical_draw(lw, make_rng(seed, 1)) for _ in range(1)]
    b = [log_categorical_draw(np.asarray(lw) + shift, make_rng(seed, 1)) for _ in range(1)]
    assert a == b


def test_reproducible_streams():
    a = gamma_draw(0.5, 1.0, make_rng(42, 3), size=100)
    b = gamma_draw(0.5, 1.0, make_rng(42, 3), size=100)
    c = gamma_draw(0.5, 1.0, make_rng(42, 4), size=100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=40, deadline=None)
@given(alpha=st.lists(st.floats(0.05, 20), min_size=2, max_size=10), seed=st.integers(0, 2**31))
def test_dirichlet_and_beta_sum_to_one(alpha, seed):
    rng = make_rng(seed)
    d = dirichlet_draw(alpha, rng)
    assert abs(d.sum() - 1.0) < 1e-12
    b = beta_draw(alpha[0], alpha[1], rng)
    assert 0.0 <= b <= 1.0
