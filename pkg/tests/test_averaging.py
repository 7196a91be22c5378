import math

import numpy as np
import pytest
from conftest import PAIR_MIXED, four_well, two_well
from scipy.integrate import solve_ivp

from nearelastic import averaging as av
from nearelastic import microsim as ms
from nearelastic.kernels import KickPair, make_stream, uniform
from nearelastic.meta import BranchTable
from nearelastic.topology import WellSystem, build_graph


def test_closed_form_example():
    d = av.EdgeDrift(0, 2 * math.sqrt(2), 1.0)
    H, T = av.edge_trajectory(d, 4.0, 1.0)
    assert T == pytest.approx(1.0, abs=1e-15)
    t = np.linspace(0, 1, 11)
    assert np.allclose(H(t), (2 - t) ** 2, atol=1e-15, rtol=0)
    assert av.duration(d, 3.0, 3.0) == 0.0
    with pytest.raises(av.DownhillOnlyError):
        av.edge_trajectory(d, 1.0, 2.0)


def test_closed_form_matches_ode():
    d = av.EdgeDrift(0, 0.85, 1.7)
    H, T = av.edge_trajectory(d, 3.0, 0.4)
    sol = solve_ivp(lambda t, y: d.rate(np.maximum(y, 0.0)), (0, T), [3.0], rtol=1e-12, atol=1e-13,
                    dense_output=True, method="DOP853")
    t = np.linspace(0, T, 50)
    assert np.max(np.abs(sol.sol(t)[0] - H(t))) <= 1e-10


def test_two_well_limit_path():
    g = two_well(PAIR_MIXED)
    for choice, leaf in (("left", 0), ("right", 1)):
        p = av.limit_path(g, 2.0, {"O3": choice})
        assert p.edges == (2, leaf)
        t0 = av.duration(av.edge_drift(g, 2), 2.0, 1.0)
        assert p.times[1] == pytest.approx(t0, rel=1e-15)
        assert p.energies[-1] == g.edges[leaf].bottom
        assert p.validate(g)


def test_single_well_consumes_no_decisions():
    g = build_graph(WellSystem((0.0, 1.0), (), (0.5,), 9.0, (PAIR_MIXED,)))
    p = av.limit_path(g, 2.0, [])
    assert p.edges == (0,) and p.energies[-1] == 0.5


def test_four_well_leftmost_path():
    pairs = tuple(KickPair(uniform(-0.5 + 0.1 * k, 1.0), uniform(0.1, 0.6)) for k in range(7))
    g = four_well(pairs)
    p = av.limit_path(g, 5.0, ["left", "left", "left"])
    assert p.edges == (6, 5, 4, 0)
    total = (av.duration(av.edge_drift(g, 6), 5.0, 3.0) + av.duration(av.edge_drift(g, 5), 3.0, 2.0)
             + av.duration(av.edge_drift(g, 4), 2.0, 1.0) + av.duration(av.edge_drift(g, 0), 1.0, 0.2))
    assert p.duration == pytest.approx(total, rel=1e-14)
    with pytest.raises(KeyError):
        av.limit_path(g, 5.0, ["left"])


def test_sampled_limit_process():
    g = four_well(tuple([PAIR_MIXED] * 7))
    p = av.sample_limit_process(g, 5.0, BranchTable({"O5": 1.0, "O6": 1.0, "O7": 1.0}), make_stream(0))
    assert av.terminal_leaf(p) == 0
    p1, p5, p6 = 0.3, 0.6, 0.7
    table = BranchTable({"O5": p1, "O6": p5, "O7": p6})
    n = 100_000
    rng = make_stream(1)
    paths = [av.sample_limit_process(g, 5.0, table, rng) for _ in range(n)]
    freq = av.terminal_distribution(paths, 4)
    expect = np.array([p1 * p5 * p6, (1 - p1) * p5 * p6, (1 - p5) * p6, 1 - p6])
    assert np.all(np.abs(freq - expect) <= 3 * np.sqrt(expect * (1 - expect) / n))


def test_zero_variance_kicks_track_limit_path():
    p = KickPair(uniform(0.5, 0.5), uniform(0.5, 0.5))
    g = build_graph(WellSystem((0.0, 1.0, 2.0), (1.0,), (0.2, 0.3), 5.0, (p, p, p)))
    path = av.limit_path(g, 2.0, {"O3": "left"})
    for eps in (1e-2, 1e-3):
        rec = ms.run(g, 2.0, 1.5, eps, path.times[1], path.times[1] / 1000, make_stream(0))
        assert av.compare(rec, path)["sup_before_vertex"] <= 2 * g.bound * eps
        assert av.sup_distance(rec, path) <= 2 * g.bound * eps


def test_observed_decisions_follow_record():
    g = two_well(PAIR_MIXED)
    rec = ms.run(g, 2.0, 1.5, 1e-3, 8.0, 0.01, make_stream(2))
    dec = av.observed_decisions(g, rec)
    leaf = int(rec.final.edge)
    assert dec == {"O3": "left" if leaf == 0 else "right"}
    path = av.limit_path(g, 2.0, dec)
    report = av.compare(rec, path)
    assert report["first_disagreement"] is None
