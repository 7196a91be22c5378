import math

import numpy as np
import pytest
from conftest import PAIR_POS, PAIR_TWOPOINT
from scipy import integrate, stats

from nearelastic.errors import ConfigError, SamplingUnsupported
from nearelastic.kernels import (KickPair, cumulant, cumulant_derivatives, density_grid, make_stream, mean,
                                 parse_spec, sample, scaled_beta, split, truncnorm, twopoint, uniform, variance)

SPECS = [uniform(-0.5, 1.0), truncnorm(0.3, 0.4, -0.6, 1.0), scaled_beta(2, 3, -1.0, 1.5),
         scaled_beta(1.5, 1, -0.4, 0.9), truncnorm(0.0, 1.0, -2.0, 2.0)]


def test_streams_are_reproducible_and_independent():
    a = make_stream(5, 1, 2).random(4)
    b = make_stream(5, 1, 2).random(4)
    c = make_stream(5, 1, 3).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    s1 = [s.random() for s in split(make_stream(5), 3)]
    s2 = [s.random() for s in split(make_stream(5), 3)]
    assert s1 == s2 and len(set(s1)) == 3


def test_degenerate_uniform_samples_zero():
    rng = make_stream(0)
    assert all(sample(uniform(0, 0), rng) == 0.0 for _ in range(10))


def test_uniform_sample_mean():
    x = uniform(0.2, 0.4).sample(make_stream(1), 10**6)
    assert abs(x.mean() - 0.3) <= 3 * (0.2 / math.sqrt(12)) / 1e3


def test_truncnorm_empirical_cdf():
    spec = truncnorm(0.0, 1.0, -2.0, 2.0)
    x = np.sort(spec.sample(make_stream(2), 10**6))
    ref = stats.truncnorm(-2.0, 2.0)
    n = len(x)
    cdf = ref.cdf(x)
    ks = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
    assert ks < 0.002


def test_closed_form_means():
    assert mean(uniform(-1.0, 3.0)) == 1.0
    assert mean(twopoint(-1.0, 0.25, 1.0)) == 0.5
    assert abs(mean(scaled_beta(2, 2, -1.0, 1.0))) <= 1e-15


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_moments_match_quadrature(spec):
    lo, hi = spec.support
    m = integrate.quad(lambda x: x * spec.pdf(x), lo, hi, epsabs=1e-13)[0]
    v = integrate.quad(lambda x: (x - m) ** 2 * spec.pdf(x), lo, hi, epsabs=1e-13)[0]
    assert abs(mean(spec) - m) <= 1e-9
    assert abs(variance(spec) - v) <= 1e-9


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_log_mgf_matches_quadrature(spec):
    lo, hi = spec.support
    for b in (-7.0, -1.0, 0.3, 4.0, 30.0):
        ref = integrate.quad(lambda x: spec.pdf(x) * math.exp(-b * x), lo, hi, epsabs=0, epsrel=1e-12)[0]
        assert abs(spec.log_mgf(b) - math.log(ref)) <= 1e-9
        vec = spec.log_mgf_vec(np.array([b]))[0]
        assert abs(vec - spec.log_mgf(b)) <= 1e-12


def test_cumulant_examples():
    assert cumulant(PAIR_POS, 0.0) == 0.0
    ref = math.log((math.exp(-0.2) - math.exp(-0.4)) / 0.2 * (math.exp(-0.6) - math.exp(-1.0)) / 0.4)
    assert abs(cumulant(PAIR_POS, 1.0) - ref) <= 1e-13
    for b in (-2.0, 0.5, 1.7):
        assert abs(cumulant(PAIR_TWOPOINT, b) - math.log(0.75 * math.exp(-b) + 0.25 * math.exp(b))) <= 1e-13
    assert abs(cumulant(PAIR_TWOPOINT, math.log(3.0))) <= 1e-15


def test_cumulant_derivatives_at_zero():
    d1, d2 = cumulant_derivatives(PAIR_POS, 0.0)
    assert abs(d1 + (0.3 + 0.8)) <= 1e-14
    assert abs(d2 - (0.2**2 / 12 + 0.4**2 / 12)) <= 1e-14


@pytest.mark.parametrize("pair", [PAIR_POS, KickPair(scaled_beta(2, 3, -1, 1.5), truncnorm(0.2, 0.3, -0.4, 0.8))])
def test_cumulant_derivative_finite_difference(pair):
    h = 1e-5
    for b in np.linspace(-4, 4, 17):
        fd = (cumulant(pair, b + h) - cumulant(pair, b - h)) / (2 * h)
        assert abs(cumulant_derivatives(pair, b)[0] - fd) <= 1e-6


def test_density_grid_uniform():
    g = density_grid(uniform(0.2, 0.6), 4001)
    inside = (g.x > 0.2 + g.dx) & (g.x < 0.6 - g.dx)
    outside = (g.x < 0.2 - g.dx) | (g.x > 0.6 + g.dx)
    assert np.allclose(g.raw[inside], 2.5, atol=0, rtol=1e-14)
    assert np.all(g.raw[outside] == 0)
    assert abs(np.trapezoid(g.density, g.x) - 1.0) <= 1e-9


def test_density_grid_truncnorm_pointwise():
    spec = truncnorm(0.3, 0.4, -0.6, 1.0)
    g = density_grid(spec, 2048)
    ref = stats.truncnorm((-0.6 - 0.3) / 0.4, (1.0 - 0.3) / 0.4, loc=0.3, scale=0.4).pdf(g.x)
    assert np.max(np.abs(g.raw - ref)) <= 1e-12
    assert abs(np.trapezoid(g.density, g.x) - 1.0) <= 1e-9


def test_parse_spec_and_errors():
    s = parse_spec("twopoint(-1, 1/4, 1)")
    assert s.params == (-1.0, 0.25, 1.0)
    assert parse_spec("truncated_normal(0,1,-2,2)").family == "truncnorm"
    for bad in ("uniform(1, 0)", "gamma(1,2)", "uniform(0)", "beta(0.5,1,0,1)", "uniform(a,1)"):
        with pytest.raises(ConfigError):
            parse_spec(bad)
    with pytest.raises(SamplingUnsupported):
        twopoint(-1, 0.25, 1).sample(make_stream(0))
    with pytest.raises(ConfigError):
        KickPair(uniform(-1, 0), uniform(-0.5, 0.2))
