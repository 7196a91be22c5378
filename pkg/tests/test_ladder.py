import math
import warnings

import numpy as np
import pytest
from conftest import PAIR_BOTH, PAIR_MIXED, PAIR_POS, two_well

from nearelastic.errors import HypothesisError
from nearelastic.kernels import KickPair, make_stream, uniform
from nearelastic.ladder import (WalkSpec, branching_probabilities, convolution_tv, general_parity, ladder_grid,
                                ladder_stats_mc, lattice_masses, walk_parity_mc, wilson_interval)

EXACT_POS = 0.3 / 1.1


def _const(c):
    return KickPair(uniform(c, c), uniform(c, c))


@pytest.mark.parametrize("lam,n,odd", [(1.0, 4, 1.0), (0.75, 2, 0.0)])
def test_deterministic_walk_parity(lam, n, odd):
    # S_m = m c, so the first passage over lam n is at m = lam n / c + 1
    c = 0.5
    m = round(lam * n / c) + 1
    assert (m % 2 == 1) == (odd == 1.0)
    est = walk_parity_mc(WalkSpec(_const(c), lam, n), 1000, make_stream(0))
    assert est.p_odd == odd


def test_parity_both_positive():
    est = walk_parity_mc(WalkSpec(PAIR_POS, 1.0, 50), 200_000, make_stream(1))
    assert abs(est.p_odd - EXACT_POS) <= 3 * est.se


def test_parity_mixed_regression():
    est = walk_parity_mc(WalkSpec(PAIR_MIXED, 1.0, 50), 10**6, make_stream(42))
    assert est.odd_count == 538558
    assert est.ci_low < est.p_odd < est.ci_high


def test_ladder_mc_both_positive():
    st = ladder_stats_mc(PAIR_POS, 200_000, make_stream(2))
    assert st.EN == 1.0
    assert abs(st.p - EXACT_POS) <= 3 * st.p_se
    assert st.Ec > 0 and 0 <= st.p <= 1


def test_ladder_mc_matches_parity_mixed():
    st = ladder_stats_mc(PAIR_MIXED, 10**6, make_stream(3))
    assert abs(st.p - 0.538558) < 0.01


def test_ladder_mc_needs_positive_eta():
    with pytest.raises(HypothesisError):
        ladder_stats_mc(PAIR_BOTH, 100, make_stream(0))


def test_lattice_masses_sum_to_one():
    k0, m = lattice_masses(uniform(-0.5, 1.0), 1e-3)
    assert abs(m.sum() - 1.0) <= 1e-12
    assert np.all(m >= 0)


def test_grid_both_positive_and_convolution():
    gr = ladder_grid(PAIR_POS, 4096)
    assert abs(gr.p - EXACT_POS) <= 1e-4
    assert convolution_tv(gr) <= 1e-6
    gm = ladder_grid(PAIR_MIXED, 4096)
    assert convolution_tv(gm) <= 1e-6
    assert 0 <= gm.p <= 1 and gm.Ec > 0
    assert abs(gm.p - 0.538558) < 0.01


def test_general_parity_both_positive_reduces_to_closed_form():
    g = general_parity(PAIR_POS, 200_000, make_stream(4))
    # every step is a ladder point, so parities alternate
    assert g.mu00 == 0.0 and g.mu11 == 0.0
    assert abs(g.formula - EXACT_POS) <= 0.003


def test_general_parity_exchangeable():
    pair = KickPair(uniform(-0.4, 0.9), uniform(-0.4, 0.9))
    g = general_parity(pair, 10**6, make_stream(5))
    assert abs(g.Eg0 - g.Eg1) <= 3 * math.hypot(g.Eg0_se, g.Eg1_se)
    assert abs(g.formula - g.mu1) <= 0.005


def test_general_parity_chain_identities():
    g = general_parity(PAIR_BOTH, 100_000, make_stream(6))
    assert g.mu0 + g.mu1 == pytest.approx(1.0, abs=1e-15)
    assert g.mu11 + g.mu10 == pytest.approx(g.mu1, abs=1e-15)
    assert g.mu01 + g.mu00 == pytest.approx(g.mu0, abs=1e-15)
    assert sum(g.nu_pairs.values()) == g.epochs - 1


def test_branching_dispatch():
    g = two_well(PAIR_POS)
    est = branching_probabilities(g, "O3", "grid", 4096, make_stream(0))
    assert est.p_left == pytest.approx(EXACT_POS, abs=1e-4)
    assert est.p_left + est.p_right == 1.0
    with pytest.raises(ValueError):
        branching_probabilities(g, "V1", "grid", 4096, make_stream(0))
    gb = two_well(PAIR_BOTH)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        est = branching_probabilities(gb, "O3", "ladder", 50_000, make_stream(0))
    assert est.method == "general_parity" and est.flags["open_formula_regime"]
    assert any("parity chain" in str(x.message) for x in w)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and 0 < hi < 0.05
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and hi - 0.5 == pytest.approx(0.5 - lo)
