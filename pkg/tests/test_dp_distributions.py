import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from dpgwas import rng
from dpgwas.dp_distributions import (PerturbedChiSqDist, convolution_pdf_quad,
                                     effective_epsilon, perturbed_cdf, perturbed_pdf,
                                     perturbed_quantile, perturbed_sf,
                                     pvalue_from_perturbed_stat)
from dpgwas.evaluation import ks_statistic

EPSILONS = [0.1, 0.2, 0.3, 0.4]


def test_pdf_continuous_at_zero():
    eps = 0.2
    left = perturbed_pdf(-1e-13, eps)
    right = perturbed_pdf(0.0, eps)
    assert left == pytest.approx(eps / 4 / (eps + 2), rel=1e-9)
    assert right == pytest.approx(0.022727272727, rel=1e-9)


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 5.0, 20.0])
def test_pdf_at_eps_two(x):
    assert perturbed_pdf(x, 2.0) == pytest.approx((x + 1) * math.exp(-x / 2) / 8, rel=1e-12)
    assert perturbed_pdf(x, 2.0) == pytest.approx(convolution_pdf_quad(x, 2.0), rel=1e-7)


@pytest.mark.parametrize("eps", [1.9999999, 2.0000001])
def test_near_two_matches_limit(eps):
    x = np.linspace(0, 30, 31)
    np.testing.assert_allclose(perturbed_pdf(x, eps), perturbed_pdf(x, 2.0), rtol=1e-5)
    np.testing.assert_allclose(perturbed_cdf(x, eps), perturbed_cdf(x, 2.0), atol=1e-6)


@pytest.mark.parametrize("eps", EPSILONS)
def test_pdf_integrates_to_one(eps):
    lo = integrate.quad(lambda x: perturbed_pdf(x, eps), -np.inf, 0)[0]
    hi = integrate.quad(lambda x: perturbed_pdf(x, eps), 0, np.inf, limit=200)[0]
    assert lo + hi == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("eps", [0.1, 0.4, 1.0, 3.0])
@pytest.mark.parametrize("x", [-10.0, -0.5, 0.5, 3.0, 12.0])
def test_pdf_matches_numerical_convolution(eps, x):
    assert perturbed_pdf(x, eps) == pytest.approx(convolution_pdf_quad(x, 4 / eps), rel=1e-7)


@pytest.mark.parametrize("eps", EPSILONS + [2.0, 5.0])
def test_cdf_is_integral_of_pdf(eps):
    for x in (-7.0, 0.0, 2.5, 15.0):
        val = integrate.quad(lambda t: perturbed_pdf(t, eps), -np.inf, min(x, 0))[0]
        if x > 0:
            val += integrate.quad(lambda t: perturbed_pdf(t, eps), 0, x)[0]
        assert perturbed_cdf(x, eps) == pytest.approx(val, abs=1e-9)


def test_cdf_limits_and_value_at_zero():
    for eps in EPSILONS:
        assert perturbed_cdf(-1e6, eps) == pytest.approx(0.0, abs=1e-12)
        assert perturbed_cdf(1e6, eps) == pytest.approx(1.0, abs=1e-12)
        assert perturbed_cdf(0.0, eps) == 1 / (eps + 2)
    assert perturbed_cdf(0.0, 0.2) == pytest.approx(0.454545454545, rel=1e-10)


@pytest.mark.slow
def test_cdf_against_monte_carlo():
    gen = rng.generator(3)
    x = gen.chisquare(2, 1_000_000) + gen.laplace(0, 4 / 0.2, 1_000_000)
    assert ks_statistic(x, lambda v: perturbed_cdf(v, 0.2)) < 0.002


def test_quantile():
    for eps in (0.1, 0.2, 2.0):
        assert perturbed_quantile(1 / (eps + 2), eps) == pytest.approx(0.0, abs=1e-8)
        assert perturbed_quantile(0.5, eps) > 0
    with pytest.raises(ValueError):
        perturbed_quantile(1.0, 0.2)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0.05, 5.0))
def test_quantile_inverts_cdf(p, eps):
    q = perturbed_quantile(p, eps)
    assert perturbed_cdf(q, eps) == pytest.approx(p, abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.floats(-200, 200), st.floats(-200, 200), st.floats(0.05, 5.0))
def test_cdf_monotone_and_sf_complement(a, b, eps):
    lo, hi = min(a, b), max(a, b)
    assert perturbed_cdf(lo, eps) <= perturbed_cdf(hi, eps) + 1e-15
    assert perturbed_cdf(a, eps) + perturbed_sf(a, eps) == pytest.approx(1.0, abs=1e-12)
    assert perturbed_pdf(a, eps) >= 0


def test_pvalue_of_statistic():
    for eps in EPSILONS:
        assert pvalue_from_perturbed_stat(0.0, eps) == pytest.approx(1 - 1 / (eps + 2))
    assert pvalue_from_perturbed_stat(1e4, 0.2) == pytest.approx(0.0, abs=1e-12)
    # tail stays accurate where 1 - cdf would cancel
    assert perturbed_sf(300.0, 0.4) > 0


def test_exact_mode_equals_quadrature():
    N, eps = 20, 0.3
    d = PerturbedChiSqDist(eps, "exact", N)
    scale = 4 * N / (N + 2) / eps
    assert d.noise_scale == pytest.approx(scale)
    assert d.eps_eff == pytest.approx(effective_epsilon(eps, N))
    for x in (-5.0, 0.0, 4.0):
        assert d.pdf(x) == pytest.approx(convolution_pdf_quad(x, scale), rel=1e-7)


def test_dist_object_validation_and_sampling():
    with pytest.raises(ValueError):
        PerturbedChiSqDist(0.2, "exact")
    with pytest.raises(ValueError):
        PerturbedChiSqDist(-1.0)
    with pytest.raises(ValueError):
        PerturbedChiSqDist(0.2, "other")
    d = PerturbedChiSqDist(0.4)
    x = d.sample(200_000, rng.generator(1))
    assert ks_statistic(x, d.cdf) < 0.01
    assert d.quantile(0.5) == pytest.approx(perturbed_quantile(0.5, 0.4))
    assert d.pvalue(3.0) == pytest.approx(d.sf(3.0))
