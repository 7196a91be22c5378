import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from nearelastic import meta, rate
from nearelastic.kernels import KickPair, cumulant, uniform
from nearelastic.ladder import wilson_interval
from nearelastic.topology import WellSystem, build_graph, locate

FAST = settings(max_examples=60, deadline=None)


@st.composite
def kick_pairs(draw):
    def one():
        a = draw(st.floats(-1.0, 0.8))
        w = draw(st.floats(0.05, 1.5))
        return uniform(round(a, 3), round(a + w, 3))
    xi, eta = one(), one()
    assume(xi.mean + eta.mean > 0.02)
    return KickPair(xi, eta)


@st.composite
def systems(draw):
    n = draw(st.integers(1, 5))
    heights = draw(st.lists(st.integers(1, 40), min_size=n - 1, max_size=n - 1, unique=True))
    heights = [h / 10 for h in heights]
    floors = [f / 1000 for f in draw(st.lists(st.integers(1, 90), min_size=n, max_size=n, unique=True))]
    widths = [draw(st.floats(0.2, 3.0)) for _ in range(n)]
    walls = tuple(np.concatenate([[0.0], np.cumsum(widths)]).tolist())
    return WellSystem(walls, tuple(heights), tuple(floors), 6.0, None)


@st.composite
def v_matrices(draw, max_n=5):
    n = draw(st.integers(2, max_n))
    vals = st.one_of(st.integers(0, 30).map(float), st.just(math.inf))
    V = np.array([[0.0 if i == j else draw(vals) for j in range(n)] for i in range(n)])
    return V


@FAST
@given(kick_pairs(), st.floats(-4, 4), st.floats(-4, 4), st.floats(0, 1))
def test_cumulant_convex_and_zero_at_origin(pair, a, b, lam):
    assert cumulant(pair, 0.0) == 0.0
    mid = cumulant(pair, lam * a + (1 - lam) * b)
    assert mid <= lam * cumulant(pair, a) + (1 - lam) * cumulant(pair, b) + 1e-9


@FAST
@given(kick_pairs(), st.floats(0.2, 3.0), st.floats(-3, 3))
def test_legendre_duality(pair, h, beta):
    eh = rate.EdgeHamiltonian(0, 1.0, pair)
    a = rate.hamiltonian_dbeta(eh, h, beta)
    L, b = rate.legendre(eh, h, a)
    assert L >= -1e-12
    assert abs(L - (a * beta - rate.hamiltonian(eh, h, beta))) <= 1e-8 * max(1.0, abs(L))


@FAST
@given(kick_pairs(), st.floats(0.2, 3.0), st.floats(-5, 5))
def test_lagrangian_nonnegative(pair, h, a):
    eh = rate.EdgeHamiltonian(0, 1.0, pair)
    sc = float(eh.scale(h))
    lo, hi = (sc * z for z in pair.zeta_range)
    # the adjoint variable diverges at the edges of the range
    assume(min(abs(a - lo), abs(a - hi)) > 1e-9 * sc)
    L, _ = rate.legendre(eh, h, a)
    assert L >= -1e-12
    if not lo < a < hi:
        assert math.isinf(L)


@settings(max_examples=200, deadline=None)
@given(v_matrices(), st.data())
def test_w_graph_matches_brute_force(V, data):
    n = len(V)
    sinks = data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n))
    a = meta.w_graph_min(range(n), V, sorted(sinks))
    b = meta.w_graph_brute(range(n), V, sorted(sinks))
    assert a.value == b.value and a.graphs == b.graphs


@settings(max_examples=150, deadline=None)
@given(v_matrices())
def test_cycle_hierarchy_nests(V):
    names = [f"V{k + 1}" for k in range(len(V))]
    try:
        rep = meta.cycle_hierarchy(names, V)
    except meta.TieError:
        return
    assert all(c.C >= 0 for c in rep.cycles)
    for i, j in rep.parent.items():
        assert rep.cycles[i].members < rep.cycles[j].members
    tops = [c for i, c in enumerate(rep.cycles) if i not in rep.parent]
    assert sorted(x for c in tops for x in c.members) == list(range(len(V)))
    assert any(math.isinf(c.C) for c in tops)
    if np.all(np.isfinite(V)):
        assert len(tops) == 1 and math.isinf(tops[0].C)


def _four_well():
    g = build_graph(WellSystem((0.0, 1.0, 2.0, 3.0, 4.0), (1.0, 2.0, 3.0), (0.2, 0.3, 0.5, 0.4), 8.0, None))
    return g, meta.rate_table_from_entries(g, {("V1", "O5"): 2.0, ("V2", "O5"): 1.0, ("O5", "O6"): 1.0,
                                               ("O6", "O7"): 1.0, ("V3", "O6"): 6.0, ("V4", "O7"): 5.0})


G4, T4 = _four_well()
probs = st.floats(0.0, 1.0)


@FAST
@given(probs, probs, probs, st.sampled_from(["O5", "O6", "O7", "V1", "V4"]))
def test_descend_distribution_is_probability(p1, p5, p6, v):
    d = meta.descend_distribution(G4, v, meta.BranchTable.from_sequence(G4, [p1, p5, p6]))
    assert np.all(d >= 0) and abs(d.sum() - 1) <= 1e-12


@FAST
@given(probs, probs, probs, st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4))
def test_timeline_rows_are_probability_vectors(p1, p5, p6, u):
    assume(sum(u) > 0.1)
    U0 = np.array(u) / sum(u)
    tl = meta.metastable_timeline(G4, T4, meta.BranchTable.from_sequence(G4, [p1, p5, p6]), U0=U0)
    for e in tl:
        assert np.all(e.distribution >= -1e-15) and abs(e.distribution.sum() - 1) <= 1e-12
    if all(0 < p < 1 for p in (p1, p5, p6)):
        assert abs(tl[-1].distribution[2] - 1) <= 1e-12


@FAST
@given(systems())
def test_topology_additivity(system):
    g = build_graph(system)
    assert len(g.edges) == 2 * len(system.leaf_floors) - 1
    for e in g.merged:
        a, b = (g.edges[c] for c in g.edges[e].children)
        assert math.isclose(g.edges[e].width, a.width + b.width, rel_tol=1e-12)
        assert a.top == b.top == g.edges[e].bottom
    heights = [g.edges[e].bottom for e in g.merged]
    assert heights == sorted(heights)


@FAST
@given(systems(), st.floats(0, 1), st.floats(0.1, 5.9))
def test_locate_contains_state(system, u, H):
    g = build_graph(system)
    q = system.wall_positions[0] + u * (system.wall_positions[-1] - system.wall_positions[0])
    e = g.edges[locate(g, H, q)]
    assert e.left <= q <= e.right and e.bottom <= H
    assert H < e.top or e.parent is None


@FAST
@given(st.integers(1, 5000), st.data())
def test_wilson_interval_bounds(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0
