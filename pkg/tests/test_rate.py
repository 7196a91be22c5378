import math

import numpy as np
import pytest
from conftest import PAIR_MIXED, PAIR_POS, PAIR_TWOPOINT, PAIR_UPHILL, FOUR_WELL_V, four_well, single_well
from scipy import integrate, optimize

from nearelastic import averaging as av
from nearelastic import rate
from nearelastic.errors import HypothesisError, NoUphillError
from nearelastic.kernels import KickPair, cumulant, cumulant_derivatives, make_stream, scaled_beta, truncnorm
from nearelastic.kernels import uniform
from nearelastic.meta import rate_table_from_entries
from nearelastic.topology import WellSystem, build_graph, make_path

EH = rate.EdgeHamiltonian(0, 1.3, PAIR_MIXED)


def test_hamiltonian_basics():
    for h in (0.3, 1.0, 2.5):
        assert rate.hamiltonian(EH, h, 0.0) == 0.0
        d0 = rate.hamiltonian_dbeta(EH, h, 0.0)
        assert d0 == pytest.approx(-math.sqrt(2 * h) / (2 * 1.3) * PAIR_MIXED.drift, rel=1e-14)
        assert d0 < 0
        for b in (-2.0, 0.7, 3.0):
            assert rate.hamiltonian(EH, 4 * h, b) == pytest.approx(2 * rate.hamiltonian(EH, h, b), rel=1e-14)


def test_legendre_at_drift_and_above():
    h = 1.7
    a0 = rate.averaged_rate(EH, h)
    L, b = rate.legendre(EH, h, a0)
    assert abs(L) <= 1e-12 and abs(b) <= 1e-8
    s = float(EH.scale(h))
    for frac in (0.2, 0.6, 0.95):
        a = a0 + frac * (s * PAIR_MIXED.zeta_range[1] - a0)
        L, b = rate.legendre(EH, h, a)
        assert L > 0 and b > 0


def test_legendre_duality_round_trip():
    h = 0.9
    for b in np.linspace(-3, 3, 13):
        a = rate.hamiltonian_dbeta(EH, h, b)
        L, bb = rate.legendre(EH, h, a)
        assert abs(bb - b) <= 1e-8
        assert L == pytest.approx(a * b - rate.hamiltonian(EH, h, b), abs=1e-10)


def test_legendre_is_a_supremum():
    h, a = 1.2, 0.1
    L, _ = rate.legendre(EH, h, a)
    res = optimize.minimize_scalar(lambda b: -(a * b - rate.hamiltonian(EH, h, b)), bounds=(-20, 20),
                                   method="bounded", options={"xatol": 1e-12})
    assert L == pytest.approx(-res.fun, abs=1e-9)


def _four_well_kicked():
    return four_well(tuple([PAIR_UPHILL] * 7))


def test_action_of_averaged_path_is_zero():
    g = _four_well_kicked()
    path = av.limit_path(g, 5.0, ["left", "right", "left"])
    assert abs(rate.action(g, path)) <= 1e-10


def test_action_uphill_positive_and_additive():
    g = single_well(PAIR_UPHILL)
    whole = make_path([0, 2], [1.5, 2.5], [0])
    halves = make_path([0, 1, 2], [1.5, 2.0, 2.5], [0, 0])
    a = rate.action(g, whole)
    assert a > 0
    assert rate.action(g, halves) == pytest.approx(a, abs=1e-10)
    # too steep for the bounded kicks
    assert math.isinf(rate.action(g, make_path([0, 1e-3], [1.5, 2.5], [0])))


def test_uphill_root():
    assert rate.uphill_root(PAIR_TWOPOINT) == pytest.approx(math.log(3.0), abs=1e-12)
    with pytest.raises(NoUphillError):
        rate.uphill_root(PAIR_POS)
    b = rate.uphill_root(PAIR_MIXED)
    grid = np.linspace(0.05, 20, 400)
    k = np.array([cumulant(PAIR_MIXED, x) for x in grid])
    j = int(np.nonzero((k[:-1] < 0) & (k[1:] > 0))[0][0])
    ref = optimize.brentq(lambda x: cumulant(PAIR_MIXED, x), grid[j], grid[j + 1], xtol=1e-15)
    assert b == pytest.approx(ref, abs=1e-12)


def test_adjacent_quasipotential():
    g = build_graph(WellSystem((0.0, 1.0, 2.0), (2.5,), (0.5, 0.7), 9.0, (PAIR_TWOPOINT,) * 3))
    assert rate.adjacent_quasipotential(g, None, "O3", "V1") == 0.0
    assert rate.adjacent_quasipotential(g, None, "V1", "O3") == pytest.approx(2 * math.log(3.0), abs=1e-12)
    gp = build_graph(WellSystem((0.0, 1.0, 2.0), (2.5,), (0.5, 0.7), 9.0, (PAIR_POS,) * 3))
    assert math.isinf(rate.adjacent_quasipotential(gp, None, "V2", "O3"))
    t = rate.compute_rate_table(g)
    assert t.check(g) == []


def test_minimize_path_bounds_and_monotone():
    eh = rate.EdgeHamiltonian(0, 1.0, PAIR_UPHILL)
    target = 2.0 * rate.uphill_root(PAIR_UPHILL)
    vals = [rate.minimize_path(eh, 1.0, 3.0, segments=s).value for s in (1, 2, 4, 8)]
    assert vals[0] >= target - 1e-9
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))
    assert all(v >= target - 1e-6 for v in vals)


def test_pairwise_quasipotential_path_sums():
    g = four_well()
    names, D = rate.pairwise_quasipotential(g, rate_table_from_entries(g, FOUR_WELL_V))
    i = {n: k for k, n in enumerate(names)}
    assert D[i["V1"], i["V3"]] == 3.0
    assert D[i["V3"], i["V4"]] == 7.0
    assert D[i["O7"], i["V2"]] == 0.0
    assert np.all(np.diag(D) == 0)


def test_tilted_sampler_mean_and_identity():
    beta = 1.3
    ts = rate.tilted_sampler(PAIR_MIXED, beta)
    n = 10**6
    z = ts.sample_zeta(make_stream(1), n)
    m, v = cumulant_derivatives(PAIR_MIXED, beta)
    assert abs(z.mean() - m) <= 3 * math.sqrt(v / n)
    w = np.exp(ts.log_lr_zeta(z))
    g = z**2
    exact = PAIR_MIXED.xi.var + PAIR_MIXED.eta.var + PAIR_MIXED.drift**2
    est = np.mean(w * g)
    assert abs(est - exact) <= 4 * np.std(w * g) / math.sqrt(n)
    ident = rate.tilted_sampler(PAIR_MIXED, 0.0)
    a = ident.sample_xi(make_stream(2), 5)
    b = PAIR_MIXED.xi.sample(make_stream(2), 5)
    assert np.array_equal(a, b)


def test_tilted_sampler_needs_densities():
    with pytest.raises(HypothesisError):
        rate.TiltedSampler(PAIR_TWOPOINT, 1.0)


def test_rare_event_edge_cases():
    g = single_well(PAIR_UPHILL)
    assert rate.rare_event_probability(g, 0, 2.0, 0.0, 4.0, 0.05, "naive", 100, make_stream(0)).estimate == 1.0
    r = rate.rare_event_probability(g, 0, 2.0, 0.5, 1.0, 0.01, "naive", 200, make_stream(0))
    assert r.upper_only and r.estimate == 0.0 and 0 < r.ci_high < 0.05
    with pytest.raises(ValueError):
        rate.rare_event_probability(g, 0, 2.0, -0.1, 1.0, 0.01, "naive", 10, make_stream(0))


def test_increment_probability_in_band():
    g = single_well(PAIR_UPHILL)
    eh = rate.edge_hamiltonian(g, 0)
    for h1, delta in ((2.1, 0.5), (1.9, 0.25)):
        lo, hi = rate.increment_band(eh, 2.0, h1, delta, 0.02)
        eps = 0.02
        v, p, se = rate.increment_log_probability(g, 0, 2.0, h1, delta, 0.02, eps, 20000, make_stream(3))
        assert p > 0
        assert lo - eps <= v <= hi + eps
    with pytest.raises(ValueError):
        rate.increment_log_probability(g, 0, 2.0, 4.0, 0.01, 0.02, 0.02, 100, make_stream(3))


def test_partial_log_mgf():
    spec = uniform(-0.5, 1.0)
    for b in (-1.0, 2.0):
        ref = integrate.quad(lambda x: math.exp(-b * x) / 1.5, -0.5, 0.0)[0]
        assert spec.partial_log_mgf(b) == pytest.approx(math.log(ref), abs=1e-12)


@pytest.mark.parametrize("pair", [PAIR_MIXED, PAIR_UPHILL,
                                  KickPair(scaled_beta(2, 3, -1.0, 1.5), truncnorm(0.2, 0.3, -0.4, 0.8))],
                         ids=["mixed", "uphill", "beta-truncnorm"])
def test_hamiltonian_properties_all_hold(pair):
    props = rate.hamiltonian_properties(rate.EdgeHamiltonian(0, 0.8, pair))
    assert {k for k, v in props.items() if not v["ok"]} == set()
    assert all(type(v["ok"]) is bool for v in props.values())
