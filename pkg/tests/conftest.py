import math
from pathlib import Path

import pytest

from nearelastic.kernels import KickPair, twopoint, uniform
from nearelastic.topology import WellSystem, build_graph

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

FOUR_WELL_V = {("V1", "O5"): 2.0, ("V2", "O5"): 1.0, ("O5", "O6"): 1.0, ("O6", "O7"): 1.0,
                ("V3", "O6"): 6.0, ("V4", "O7"): 5.0}

CRITERIA = {
    1: "averaging: p95 sup error <= 0.05 H0 at eps=1e-3, medians decrease in eps",
    2: "branching closed form 3/11 for both-positive kicks",
    3: "estimator agreement mc / ladder / grid for mixed-sign xi",
    4: "two-state parity chain formula vs direct parity within 0.02",
    5: "Hamiltonian invariant suite",
    6: "quasi-potential: beta* = ln 3 and path minimisation within 1%",
    7: "rare-event slope within 15% of beta*",
    8: "four-well regression: exit exponents and timeline",
    9: "W-graph search equals brute force on 1000 instances",
    10: "determinism: reruns and manifest replays are byte identical",
}

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        ok = rep.passed
        _results[n] = _results.get(n, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _results:
            continue
        tr.write_line(f"{'PASS' if _results[n] else 'FAIL'} criterion {n}: {CRITERIA[n]}")


# ---------------------------------------------------------------------------
# shared systems

PAIR_POS = KickPair(uniform(0.2, 0.4), uniform(0.6, 1.0))
PAIR_MIXED = KickPair(uniform(-0.5, 1.0), uniform(0.1, 0.6))
PAIR_BOTH = KickPair(uniform(-0.4, 0.8), uniform(-0.3, 0.9))
PAIR_UPHILL = KickPair(uniform(-0.5, 1.0), uniform(-0.2, 0.4))
# xi + eta = +1 w.p. 3/4 and -1 w.p. 1/4
PAIR_TWOPOINT = KickPair(twopoint(-1.0, 0.25, 1.0), uniform(0.0, 0.0))


def two_well(pair=PAIR_MIXED, cap=5.0):
    return build_graph(WellSystem((0.0, 1.0, 2.0), (1.0,), (0.2, 0.3), cap, (pair,) * 3))


def single_well(pair=PAIR_UPHILL, floor=1.0, cap=100.0, width=1.0):
    return build_graph(WellSystem((0.0, width), (), (floor,), cap, (pair,)))


def four_well(pairs=None):
    return build_graph(WellSystem((0.0, 1.0, 2.0, 3.0, 4.0), (1.0, 2.0, 3.0), (0.2, 0.3, 0.5, 0.4), 8.0, pairs))


@pytest.fixture
def four_well_table():
    from nearelastic import meta

    g = four_well()
    return g, meta.rate_table_from_entries(g, FOUR_WELL_V)


def isclose(a, b, tol):
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)
