import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pswinfer.bootstrap import BootstrapDistribution
from pswinfer.ci import (
    CIMethod,
    ConfidenceInterval,
    acceleration,
    bca_levels,
    bias_correction,
    ci_basic,
    ci_bca,
    ci_percentile,
    ci_wald,
    min_replicates,
    quantile,
)
from pswinfer.errors import NegativeSE, TooFewReplicates

import oracles

Z975 = 1.9599639845400536  # oracles.norm_ppf(0.975)


def test_wald_standard_normal():
    ci = ci_wald(0.0, 1.0)
    assert ci.lower == pytest.approx(-1.959964, abs=1e-6)
    assert ci.upper == pytest.approx(1.959964, abs=1e-6)
    assert ci.p_value == 1.0 and ci.method is CIMethod.WALD


def test_wald_degenerate_and_negative():
    ci = ci_wald(0.2, 0.0)
    assert ci.lower == ci.upper == 0.2
    with pytest.raises(NegativeSE):
        ci_wald(0.0, -1e-3)


def test_wald_direct_formula():
    ci = ci_wald(-0.18, 0.05)
    assert ci.lower == pytest.approx(-0.18 - Z975 * 0.05, abs=1e-12)
    assert ci.upper == pytest.approx(-0.18 + Z975 * 0.05, abs=1e-12)
    assert ci.p_value == pytest.approx(2 * oracles.norm_cdf(-0.18 / 0.05), abs=1e-12)
    ci90 = ci_wald(-0.18, 0.05, level=0.9)
    assert ci90.upper == pytest.approx(-0.18 + oracles.norm_ppf(0.95) * 0.05, abs=1e-12)


def test_percentile_examples():
    assert (ci_percentile(np.full(40, 0.7)).lower, ci_percentile(np.full(40, 0.7)).upper) == (0.7, 0.7)
    ci = ci_percentile(np.arange(1, 1001.0))
    assert (ci.lower, ci.upper) == pytest.approx((25.975, 975.025), abs=1e-9)
    assert ci.p_value is None


def test_too_few_replicates():
    assert min_replicates(0.95) == 40
    assert min_replicates(0.9) == 20
    with pytest.raises(TooFewReplicates):
        ci_percentile(np.arange(39.0))
    ci_percentile(np.arange(40.0))
    with pytest.raises(TooFewReplicates):
        ci_basic(0.0, np.arange(10.0))


def test_basic_arithmetic():
    # quantiles 0.2 / 0.9 placed exactly at the 2.5% and 97.5% positions of 41 values
    est = np.concatenate([[0.0], [0.2], np.linspace(0.3, 0.8, 37), [0.9], [1.0]])
    assert quantile(est, 0.025) == pytest.approx(0.2) and quantile(est, 0.975) == pytest.approx(0.9)
    ci = ci_basic(0.5, est)
    assert (ci.lower, ci.upper) == pytest.approx((0.1, 0.8), abs=1e-12)


def test_symmetric_distribution():
    half = np.random.default_rng(0).exponential(size=200)
    est = np.concatenate([0.3 + half, 0.3 - half])
    pct, bas = ci_percentile(est), ci_basic(0.3, est)
    assert bas.lower == pytest.approx(pct.lower, abs=1e-12)
    assert bas.upper == pytest.approx(pct.upper, abs=1e-12)


def test_bca_reduces_to_percentile():
    half = np.random.default_rng(1).normal(size=100)
    est = np.concatenate([0.1 + half, 0.1 - half])
    jk = np.concatenate([[-1.0, 1.0], [-0.5, 0.5]])
    assert bias_correction(0.1, est) == 0.0 and acceleration(jk) == 0.0
    bca, pct = ci_bca(0.1, est, jk), ci_percentile(est)
    assert (bca.lower, bca.upper) == (pct.lower, pct.upper)


def test_bca_constant():
    ci = ci_bca(0.4, np.full(100, 0.4), np.full(20, 0.4))
    assert ci.lower == ci.upper == 0.4


def test_bca_levels_against_scalar_oracle():
    z0, a = 0.3, 0.05
    lo, hi = bca_levels(z0, a)
    assert lo == pytest.approx(oracles.bca_level(z0, a, 0.025), abs=1e-10)
    assert hi == pytest.approx(oracles.bca_level(z0, a, 0.975), abs=1e-10)
    assert (lo, hi) == pytest.approx((0.10883478488261111, 0.9977993449558952), abs=1e-10)


def test_bca_skewed_distribution_uses_adjusted_levels():
    g = np.random.default_rng(2)
    est = g.gamma(2.0, 1.0, 2000)
    point = 1.6
    jk = g.gamma(2.0, 1.0, 60)
    z0 = bias_correction(point, est)
    share = np.mean(est < point)
    assert z0 == pytest.approx(oracles.norm_ppf(share), abs=1e-12)
    dev = jk.mean() - jk
    assert acceleration(jk) == pytest.approx(np.sum(dev ** 3) / (6 * np.sum(dev ** 2) ** 1.5))
    a1, a2 = bca_levels(z0, acceleration(jk))
    ci = ci_bca(point, est, jk)
    assert ci.lower == pytest.approx(oracles.quantile(est.tolist(), a1), abs=1e-12)
    assert ci.upper == pytest.approx(oracles.quantile(est.tolist(), a2), abs=1e-12)


def test_bias_correction_ties_and_clamp():
    assert bias_correction(0.0, np.array([-1.0, 0.0, 0.0, 1.0])) == 0.0
    B = 50
    assert bias_correction(10.0, np.zeros(B)) == pytest.approx(oracles.norm_ppf(B / (B + 1)))
    assert bias_correction(-10.0, np.zeros(B)) == pytest.approx(oracles.norm_ppf(1 / (B + 1)))


def test_interval_type_validation():
    with pytest.raises(ValueError):
        ConfidenceInterval(1.0, 0.0)
    with pytest.raises(ValueError):
        ConfidenceInterval(0.0, 1.0, level=1.0)
    assert ConfidenceInterval(-1, 1).covers(0.5) and ConfidenceInterval(-1, 1).width == 2


def test_accepts_distribution_objects():
    dist = BootstrapDistribution(np.arange(100.0), {}, 100)
    assert ci_percentile(dist) == ci_percentile(np.arange(100.0))


_dists = arrays(float, st.integers(40, 300), elements=st.floats(-1, 1, allow_subnormal=False))


@settings(max_examples=60, deadline=None)
@given(_dists, st.floats(-1, 1), st.sampled_from([0.8, 0.9, 0.95]))
def test_interval_identities(est, point, level):
    if est.size < min_replicates(level):
        return
    pct = ci_percentile(est, level)
    bas = ci_basic(point, est, level)
    assert est.min() <= pct.lower <= pct.upper <= est.max()
    assert bas.lower == 2 * point - pct.upper and bas.upper == 2 * point - pct.lower
    assert bas.lower + pct.upper == pytest.approx(2 * point, abs=1e-12)
    assert bas.upper + pct.lower == pytest.approx(2 * point, abs=1e-12)
    ref = oracles.quantile(est.tolist(), (1 - level) / 2)
    assert pct.lower == pytest.approx(ref, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1, 1), st.floats(0, 1), st.sampled_from([0.8, 0.9, 0.95, 0.99]))
def test_wald_width(point, se, level):
    ci = ci_wald(point, se, level)
    z = oracles.norm_ppf(0.5 + level / 2)
    assert ci.width == pytest.approx(2 * z * se, abs=1e-12)
    assert 0.0 <= ci.p_value <= 1.0
