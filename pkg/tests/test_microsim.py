import math

import numpy as np
import pytest
from conftest import PAIR_MIXED, two_well

from nearelastic import microsim as ms
from nearelastic.errors import CapExceeded, ConfigError
from nearelastic.kernels import KickPair, make_stream, uniform
from nearelastic.topology import WellSystem, build_graph

EPS = 2.0**-10


def _const_pair(c):
    return KickPair(uniform(c, c), uniform(c, c))


def test_two_deterministic_collisions_drop_exactly():
    g = build_graph(WellSystem((0.0, 1.5), (), (0.25,), 10.0, (_const_pair(0.5),)))
    s = ms.initial_state(g, 2.0, 0.75)
    s1, ev1 = ms.step(s, g, EPS, make_stream(0))
    s2, ev2 = ms.step(s1, g, EPS, make_stream(0))
    assert s2.H == 2.0 - EPS * 2 * 0.5
    assert (ev1.side, ev2.side) == (0, 1)
    assert s2.collision_counts == {(0, 0): 1, (0, 1): 1}
    assert s2.natural_time == pytest.approx(0.75 / 2.0 + 1.5 / math.sqrt(2 * (2.0 - EPS * 0.5)), rel=1e-15)


def test_floor_clamp():
    g = build_graph(WellSystem((0.0, 1.0), (), (1.0,), 10.0, (PAIR_MIXED,)))
    s = ms.initial_state(g, 1.0 + 1e-3 * 0.1, 0.5)
    s1, _ = ms.step(s, g, 1e-3, None, kick=0.5)
    assert s1.H == 1.0


def test_kick_below_merge_vertex_relocates_by_position():
    g = two_well(PAIR_MIXED)
    s = ms.initial_state(g, 1.0 + 1e-4, 0.5, direction=-1)
    assert s.edge == 2
    s1, ev = ms.step(s, g, 1e-3, None, kick=0.5)
    assert s1.q == 0.0 and s1.edge == 0 and ev.edge_post == 0
    s = ms.initial_state(g, 1.0 + 1e-4, 1.5, direction=1)
    s1, _ = ms.step(s, g, 1e-3, None, kick=0.5)
    assert s1.q == 2.0 and s1.edge == 1
    # landing exactly on the vertex energy stays in the merged well
    s = ms.initial_state(g, 1.0 + 5e-4, 0.5)
    s1, _ = ms.step(s, g, 1e-3, None, kick=0.5)
    assert s1.H == 1.0 and s1.edge == 2


def test_cap_exceeded():
    g = two_well(PAIR_MIXED, cap=5.0)
    s = ms.initial_state(g, 5.0 - 1e-5, 1.0)
    with pytest.raises(CapExceeded):
        ms.step(s, g, 1e-3, None, kick=-0.5)


@pytest.mark.parametrize("offset,leaf", [(0.0123, 0), (0.0127, 1)])
def test_first_branch_parity_of_deterministic_kicks(offset, leaf):
    # energy after k kicks is H0 - k eps c; kick k is at the left wall when k is odd
    c, eps = 0.5, 1e-3
    k = math.floor(offset / (eps * c)) + 1
    assert (k % 2 == 1) == (leaf == 0)
    g = two_well(_const_pair(c))
    assert ms.first_branch(g, 2, 1.0 + offset, 1.0, eps, make_stream(0)) == leaf


def test_epsilon_guard():
    g = two_well(PAIR_MIXED)
    with pytest.raises(ConfigError):
        ms.run(g, 2.0, 1.5, 0.5, 1.0, 0.1, make_stream(0))


def test_collision_count_bounds():
    D = 1.0
    g = build_graph(WellSystem((0.0, D), (), (0.1,), 10.0, (PAIR_MIXED,)))
    eps = 1e-3
    rec = ms.run(g, 2.0, 0.5, eps, 1.0, 0.01, make_stream(3))
    H_min, H_max = float(np.min(rec.ev_H_post)), 2.0
    delta = 0.05
    c1 = math.sqrt(2 * H_min) / (2 * D) * (1 - delta)
    c2 = math.sqrt(2 * H_max) / (2 * D) * (1 + delta)
    # one round trip per two wall collisions
    trips = rec.n_collisions / 2
    assert c1 / eps <= trips <= c2 / eps


def test_interpolated_and_step_energy_stay_close():
    g = two_well(PAIR_MIXED)
    eps = 1e-3
    rec = ms.run(g, 2.0, 1.5, eps, 6.0, 0.001, make_stream(4))
    ok = ~np.isnan(rec.H_hat)
    assert np.max(np.abs(rec.H_hat[ok] - rec.H_step[ok])) <= 2 * g.bound * eps
    assert rec.n_collisions == len(rec.ev_t)
    assert np.all(np.diff(rec.ev_t) > 0)


def test_zero_variance_kicks_are_deterministic():
    c = 0.25
    g = build_graph(WellSystem((0.0, 1.0), (), (0.1,), 10.0, (_const_pair(c),)))
    rec = ms.run(g, 2.0, 0.5, EPS, 1.0, 0.01, make_stream(0))
    k = np.arange(1, rec.n_collisions + 1)
    assert np.max(np.abs(rec.ev_H_post - (2.0 - k * EPS * c))) <= 1e-12
    rec2 = ms.run(g, 2.0, 0.5, EPS, 1.0, 0.01, make_stream(99))
    assert np.array_equal(rec.H_hat, rec2.H_hat, equal_nan=True)


def test_run_reproducible():
    g = two_well(PAIR_MIXED)
    a = ms.run(g, 2.0, 1.5, 1e-3, 2.0, 0.01, make_stream(5))
    b = ms.run(g, 2.0, 1.5, 1e-3, 2.0, 0.01, make_stream(5))
    assert np.array_equal(a.H_hat, b.H_hat, equal_nan=True)
    assert np.array_equal(a.ev_kick, b.ev_kick)
    assert a.final == b.final


def test_branch_runs_independent_of_workers():
    g = two_well(PAIR_MIXED)
    a = ms.branch_runs(g, 2, 1.05, 1.0, 1e-3, 20000, make_stream(6), workers=1)
    b = ms.branch_runs(g, 2, 1.05, 1.0, 1e-3, 20000, make_stream(6), workers=4)
    assert np.array_equal(a.leaves, b.leaves)
    assert a.n_undecided == 0


def test_mirror_symmetry_of_branching():
    pair = KickPair(uniform(-0.3, 0.9), uniform(0.1, 0.5))
    n = 100_000
    g = two_well(pair)
    gm = two_well(pair.swapped())
    left = ms.branch_runs(g, 2, 1.05, 1.0, 1e-3, n, make_stream(7, 0), direction=-1).counts(2)[0] / n
    right = ms.branch_runs(gm, 2, 1.05, 1.0, 1e-3, n, make_stream(7, 1), direction=1).counts(2)[1] / n
    se = math.sqrt(left * (1 - left) / n + right * (1 - right) / n)
    assert abs(left - right) <= 3 * se
