"""Metastability on the merge tree.

Exterior vertices (leaf bottoms) are the stable states. Given the
quasi-potential V between them, the W-graph sums give the exit exponents
C(pi) of the hierarchy of cycles, and the branching probabilities at the
interior vertices say where the process lands after an exit. Together they
give the sequence of distributions the process occupies on the time scales
exp(s / eps).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import ConfigError, InvariantFailure, TieError
from .rate import RateTable, pairwise_quasipotential
from .topology import WellGraph

MAX_STATES = 12


# ---------------------------------------------------------------------------
# branching


@dataclass
class BranchTable:
    """Probability of falling into the left subtree at each interior vertex."""

    left: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, p in self.left.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"branch probability at {k} must be in [0, 1], got {p!r}")

    def p_left(self, name: str) -> float:
        return self.left[name]

    def p_right(self, name: str) -> float:
        return 1.0 - self.left[name]

    @classmethod
    def from_sequence(cls, graph: WellGraph, values) -> "BranchTable":
        """Values in the order of the interior vertices (merge order)."""
        names = graph.interior_names
        values = list(values)
        if len(values) != len(names):
            raise ConfigError(f"expected {len(names)} branch probabilities, got {len(values)}")
        return cls(dict(zip(names, map(float, values))))

    @classmethod
    def halves(cls, graph: WellGraph) -> "BranchTable":
        return cls({n: 0.5 for n in graph.interior_names})

    def check(self, graph: WellGraph):
        missing = [n for n in graph.interior_names if n not in self.left]
        if missing:
            raise ConfigError(f"branch probabilities missing for {', '.join(missing)}")


def descend_distribution(graph: WellGraph, vertex: str, branch: BranchTable) -> np.ndarray:
    """Leaf distribution reached by falling from ``vertex`` through the branchings below it.

    Entry k is the probability of ending at the bottom of leaf k + 1; leaves
    outside the subtree get exactly zero. An exterior vertex gives a point mass.
    """
    out = np.zeros(graph.n_leaves)
    e = graph.vertex_edge(vertex)

    def walk(e, w):
        edge = graph.edges[e]
        if edge.is_leaf:
            out[e] += w
            return
        name = edge.bottom_vertex
        pl = branch.p_left(name)
        cl, cr = edge.children
        walk(cl, w * pl)
        walk(cr, w * (1.0 - pl))

    walk(e, 1.0)
    return out


# ---------------------------------------------------------------------------
# quasi-potential between exterior vertices


def exterior_V(graph: WellGraph, rate_table: RateTable):
    """(exterior names, V matrix) from the shortest-path quasi-potential."""
    names, D = pairwise_quasipotential(graph, rate_table)
    ext = graph.exterior_names
    idx = [names.index(n) for n in ext]
    return list(ext), D[np.ix_(idx, idx)]


def parse_v_table(text: str) -> dict:
    """Read ``A B value`` lines (``#`` comments, ``inf`` allowed)."""
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 3:
            raise ConfigError("expected 'FROM TO VALUE'", line=ln, column=1)
        a, b, v = parts
        try:
            val = float(v)
        except ValueError:
            raise ConfigError(f"bad value {v!r}", line=ln, column=line.index(v) + 1) from None
        if val < 0:
            raise ConfigError(f"V must be nonnegative, got {v}", line=ln, column=line.index(v) + 1)
        out[(a, b)] = val
    return out


def rate_table_from_entries(graph: WellGraph, entries: dict) -> RateTable:
    """RateTable from supplied adjacent entries; missing downhill entries default to 0."""
    table = RateTable()
    known = set()
    for lo, hi in graph.adjacent_pairs():
        known |= {(lo, hi), (hi, lo)}
        if (lo, hi) not in entries:
            raise ConfigError(f"V({lo},{hi}) is missing from the table")
        table.set(lo, hi, entries[(lo, hi)], "supplied")
        down = entries.get((hi, lo), 0.0)
        if down != 0.0:
            raise ConfigError(f"downhill V({hi},{lo}) must be 0, got {down!r}")
        table.set(hi, lo, 0.0, "supplied")
    extra = sorted(set(entries) - known)
    if extra:
        raise ConfigError(f"V entries for non-adjacent vertices: {extra}")
    return table


# ---------------------------------------------------------------------------
# W-graphs


@dataclass(frozen=True)
class WGraphResult:
    value: float
    graphs: tuple  # each a tuple of (from, to) arrows, sorted by source

    @property
    def n_minimizers(self) -> int:
        return len(self.graphs)


def w_graph_min(states, V, sink_set, max_states: int = MAX_STATES) -> WGraphResult:
    """Minimal total weight over W-graphs with the given sink set.

    A W-graph assigns one arrow m -> n (n != m) to every state m outside
    ``sink_set`` so that following arrows from any state ends in the sink
    set. ``states`` are indices into the square matrix ``V``. Depth-first
    enumeration with arrows tried in increasing weight; a branch is cut when
    its partial sum plus the cheapest remaining arrows already exceeds the
    best total, or when an arrow would close a loop. Ties are kept, so all
    minimizers are returned. With no admissible graph the value is +inf.
    """
    states = list(states)
    if len(states) > max_states:
        raise ConfigError(f"W-graph enumeration is limited to {max_states} states, got {len(states)}")
    sinks = set(sink_set)
    if not sinks <= set(states):
        raise ValueError("sink_set must be a subset of states")
    free = [m for m in states if m not in sinks]
    if not free:
        return WGraphResult(0.0, ((),))
    if not sinks:
        return WGraphResult(math.inf, ())
    V = np.asarray(V, dtype=float)
    choices = {}
    for m in free:
        opts = sorted((V[m, n], n) for n in states if n != m and np.isfinite(V[m, n]))
        if not opts:
            return WGraphResult(math.inf, ())
        choices[m] = opts
    # fewest options first keeps the tree narrow
    order = sorted(free, key=lambda m: (len(choices[m]), m))
    cheapest = [choices[m][0][0] for m in order]
    tail = np.concatenate([np.cumsum(cheapest[::-1])[::-1], [0.0]])
    best = [math.inf]
    found = []
    arrow = {}

    def closes_loop(m, n):
        while n in arrow:
            n = arrow[n]
            if n == m:
                return True
        return n == m

    def dfs(k, total):
        if k == len(order):
            if total < best[0]:
                best[0] = total
                found.clear()
            if total == best[0]:
                found.append(tuple(sorted(arrow.items())))
            return
        m = order[k]
        for w, n in choices[m]:
            t = total + w
            if t + tail[k + 1] > best[0]:
                break
            if closes_loop(m, n):
                continue
            arrow[m] = n
            dfs(k + 1, t)
            del arrow[m]

    dfs(0, 0.0)
    return WGraphResult(best[0], tuple(sorted(found)))


def w_graph_brute(states, V, sink_set) -> WGraphResult:
    """Reference enumeration of every arrow assignment; exponential, for small inputs."""
    states = list(states)
    sinks = set(sink_set)
    free = [m for m in states if m not in sinks]
    if not free:
        return WGraphResult(0.0, ((),))
    V = np.asarray(V, dtype=float)
    best = math.inf
    found = []
    targets = [[n for n in states if n != m] for m in free]
    for combo in itertools.product(*targets):
        g = dict(zip(free, combo))
        ok = True
        for m in free:
            seen = set()
            x = m
            while x in g:
                if x in seen:
                    ok = False
                    break
                seen.add(x)
                x = g[x]
            if not ok:
                break
        if not ok:
            continue
        total = sum(V[m, n] for m, n in g.items())
        if not np.isfinite(total):
            continue
        if total < best:
            best, found = total, []
        if total == best:
            found.append(tuple(sorted(g.items())))
    return WGraphResult(best, tuple(sorted(found)))


# ---------------------------------------------------------------------------
# cycles


@dataclass(frozen=True)
class Cycle:
    members: frozenset  # state indices
    rank: int
    A: float
    inner: float  # min over x in the cycle of the W-graph sum within it with sink {x}
    ground: tuple  # minimizers of that inner sum
    exits: tuple  # arrows (x, y) leaving the cycle in minimizing graphs

    @property
    def C(self) -> float:
        if math.isinf(self.A):
            return math.inf
        return self.A - self.inner


@dataclass
class CycleReport:
    names: list
    V: np.ndarray
    cycles: list  # in order of formation, singletons first
    parent: dict  # cycle index -> parent cycle index
    notes: list = field(default_factory=list)

    def label(self, c: Cycle) -> str:
        return "{" + ",".join(self.names[i] for i in sorted(c.members)) + "}"

    def find(self, members) -> Cycle:
        members = frozenset(members)
        for c in self.cycles:
            if c.members == members:
                return c
        raise KeyError(members)

    def C_by_label(self) -> dict:
        return {self.label(c): c.C for c in self.cycles}

    def chain(self, state: int) -> list:
        """Indices of the cycles containing ``state``, smallest first."""
        return [i for i, c in enumerate(self.cycles) if state in c.members]


def _cycle_data(all_states, V, members, rank) -> Cycle:
    members = frozenset(members)
    outside = [s for s in all_states if s not in members]
    if outside:
        res = w_graph_min(all_states, V, outside)
        A = res.value
        exits = sorted({(m, n) for g in res.graphs for m, n in g if m in members and n not in members})
    else:
        A, exits = math.inf, []
    inner_vals = {x: w_graph_min(sorted(members), V, [x]).value for x in members}
    inner = min(inner_vals.values())
    ground = tuple(sorted(x for x, v in inner_vals.items() if v == inner))
    return Cycle(members, rank, A, inner, ground, tuple(exits))


def cycle_hierarchy(states, V) -> CycleReport:
    """Build the nested cycles over ``states`` (labels) with quasi-potential matrix ``V``.

    Rank 0 cycles are the single states. At each rank every current cycle
    points to the cycle holding the head of its minimizing exit arrow; loops
    of this map merge into cycles of the next rank, the rest carry over.
    Tied exits are accepted when every tie resolution forms the same loops;
    otherwise :class:`TieError` names the tied targets.
    """
    names = list(states)
    n = len(names)
    V = np.asarray(V, dtype=float)
    if V.shape != (n, n):
        raise ValueError("V must be square and match states")
    if n > MAX_STATES:
        raise ConfigError(f"at most {MAX_STATES} states are supported")
    idx = list(range(n))
    cycles = [_cycle_data(idx, V, {i}, 0) for i in idx]
    current = list(range(n))
    parent = {}
    rank = 0
    notes = []
    while len(current) > 1:
        rank += 1
        owner = {}
        for ci in current:
            for s in cycles[ci].members:
                owner[s] = ci
        options = []
        for ci in current:
            heads = sorted({owner[y] for _, y in cycles[ci].exits})
            options.append(heads if heads else [None])
        loops_seen = set()
        for combo in itertools.product(*options):
            nxt = dict(zip(current, combo))
            loops = set()
            for start in current:
                path = []
                x = start
                while x is not None and x not in path:
                    path.append(x)
                    x = nxt[x]
                if x is not None:
                    loops.add(frozenset(path[path.index(x):]))
            loops_seen.add(frozenset(loops))
        if len(loops_seen) != 1:
            tied = [(names_of(cycles[ci], names), [names_of(cycles[h], names) for h in opts])
                    for ci, opts in zip(current, options) if len(opts) > 1]
            raise TieError(f"tied exits change the cycle structure: {tied}")
        loops = next(iter(loops_seen))
        if any(len(opts) > 1 for opts in options):
            notes.append(f"rank {rank}: tied exits resolved without changing the cycles")
        if not loops:
            # all exits infinite: the remaining cycles never merge
            notes.append(f"rank {rank}: no finite exits; {len(current)} disconnected cycles remain")
            break
        new_current = [ci for ci in current if not any(ci in lp for lp in loops)]
        for lp in sorted(loops, key=lambda s: sorted(s)):
            members = frozenset().union(*(cycles[ci].members for ci in lp))
            cycles.append(_cycle_data(idx, V, members, rank))
            k = len(cycles) - 1
            for ci in lp:
                parent[ci] = k
            new_current.append(k)
        current = sorted(new_current)
    for i, c in enumerate(cycles):
        if i in parent and not c.C < cycles[parent[i]].C:
            notes.append(f"cycle {names_of(c, names)} has C not below its parent's")
    return CycleReport(names, V, cycles, parent, notes)


def names_of(c: Cycle, names) -> str:
    return "{" + ",".join(names[i] for i in sorted(c.members)) + "}"


# ---------------------------------------------------------------------------
# exits and timeline


@dataclass(frozen=True)
class ExitProfile:
    C: float
    landing: np.ndarray | None  # over exterior vertices; None when the exit is impossible
    via: tuple  # vertex names the landing descends from
    landings: tuple  # one array per distinct landing among the minimizers

    @property
    def multi_landing(self) -> bool:
        return len(self.landings) > 1


def _lca_vertex(graph: WellGraph, a: str, b: str) -> str:
    e = graph.lca(graph.vertex_edge(a), graph.vertex_edge(b))
    return graph.edges[e].bottom_vertex


def exit_profile(cycle: Cycle, V, graph: WellGraph, branch: BranchTable, names=None) -> ExitProfile:
    """Exit exponent and landing distribution of ``cycle``.

    The landing falls from the top vertex of the minimizing exit arrow, the
    lowest common ancestor of its two endpoints, through the branchings.
    """
    names = list(names) if names is not None else list(graph.exterior_names)
    if math.isinf(cycle.C) or not cycle.exits:
        return ExitProfile(math.inf, None, (), ())
    vias = sorted({_lca_vertex(graph, names[x], names[y]) for x, y in cycle.exits})
    dists = []
    for v in vias:
        d = descend_distribution(graph, v, branch)
        if not any(np.array_equal(d, o) for o in dists):
            dists.append(d)
    landing = np.mean(dists, axis=0)
    return ExitProfile(cycle.C, landing, tuple(vias), tuple(dists))


@dataclass(frozen=True)
class TimelineEntry:
    scale: float  # threshold reached; the distribution holds on (scale, next scale)
    distribution: np.ndarray
    absorbing: tuple  # exterior names acting as absorbing states after this threshold


def metastable_timeline(graph: WellGraph, rate_table: RateTable, branch: BranchTable, U0=None,
                        report: CycleReport | None = None, tol: float = 1e-12):
    """Sequence of metastable distributions over the exterior vertices.

    At each threshold s among the distinct finite exit exponents, a state
    stays put if it is the ground state of the smallest cycle around it whose
    exponent exceeds s; any other state jumps with the landing law of the
    largest cycle around it whose exponent is at most s. The jump chain is
    absorbed exactly by a linear solve.
    """
    branch.check(graph)
    if report is None:
        names, V = exterior_V(graph, rate_table)
        report = cycle_hierarchy(names, V)
    names = report.names
    n = len(names)
    if U0 is None:
        root = graph.edges[graph.root].bottom_vertex
        U0 = descend_distribution(graph, root, branch)
    U = np.asarray(U0, dtype=float).copy()
    if U.shape != (n,) or np.any(U < 0) or abs(U.sum() - 1.0) > tol:
        raise ConfigError("the start distribution must be a probability vector over the exterior vertices")
    Cs = [c.C for c in report.cycles if math.isfinite(c.C)]
    thresholds = sorted(set(Cs))
    by_value = {}
    for c in report.cycles:
        if math.isfinite(c.C):
            by_value.setdefault(c.C, []).append(report.label(c))
    ties = {k: v for k, v in by_value.items() if len(v) > 1}
    if ties:
        raise TieError(f"cycles share exit exponents: {ties}")
    profiles = [exit_profile(c, report.V, graph, branch, names) for c in report.cycles]
    timeline = [TimelineEntry(0.0, U.copy(), tuple(names))]
    for s in thresholds:
        P = np.zeros((n, n))
        absorbing = []
        for x in range(n):
            chain = report.chain(x)
            active = next((i for i in chain if report.cycles[i].C > s), None)
            low = [i for i in chain if report.cycles[i].C <= s]
            if active is not None and x in report.cycles[active].ground and len(report.cycles[active].ground) > 1:
                raise TieError(f"ground state of {report.label(report.cycles[active])} is tied")
            if active is None or not low or x in report.cycles[active].ground:
                absorbing.append(x)
                P[x, x] = 1.0
            else:
                P[x] = profiles[low[-1]].landing
        U, held = _absorb(U, P, absorbing)
        if np.any(U < -tol) or abs(U.sum() - 1.0) > 1e-12:
            raise InvariantFailure(f"timeline distribution at scale {s} is not a probability vector: {U}")
        U = np.clip(U, 0.0, None)
        timeline.append(TimelineEntry(s, U.copy(), tuple(names[i] for i in held)))
    return timeline


def _absorb(U, P, absorbing):
    """Long-run law of the jump chain ``P`` started from ``U``.

    ``absorbing`` lists the designated sinks. With a branching probability of
    exactly 0 or 1 a jumping state can land back on itself (or cycle among a
    few states) with certainty; such closed classes hold their mass and spread
    it by their stationary law. Returns the distribution and the sorted
    states of all closed classes.
    """
    n = len(U)
    # the embedded chain without self-loops has the same hitting law and
    # avoids forming 1 - P[i, i], which cancels for tiny leaks
    J = np.array(P, dtype=float)
    np.fill_diagonal(J, 0.0)
    rs = J.sum(axis=1)
    stuck = rs == 0
    J[~stuck] /= rs[~stuck, None]
    J[stuck, stuck] = 1.0
    adj = sparse.csr_matrix(J > 0)
    ncomp, lab = csgraph.connected_components(adj, directed=True, connection="strong")
    src, dst = adj.nonzero()
    leaking = set(lab[src[lab[src] != lab[dst]]].tolist())
    leaves = [c for c in range(ncomp) if c not in leaking]
    rec = sorted(i for i in range(n) if lab[i] in leaves)
    if not set(absorbing) <= set(rec):
        raise InvariantFailure("a designated absorbing state leaves its class")
    trans = [i for i in range(n) if i not in rec]
    hit = np.zeros(n)
    hit[rec] = U[rec]
    cond = 1.0
    if trans:
        M = np.eye(len(trans)) - J[np.ix_(trans, trans)]
        cond = np.linalg.cond(M)
        # row vector times the fundamental matrix
        y = np.linalg.solve(M.T, U[trans])
        hit[rec] += y @ J[np.ix_(trans, rec)]
    if abs(hit.sum() - U.sum()) > 1e-13 * max(1.0, cond):
        raise InvariantFailure(f"absorption lost mass beyond round-off (condition number {cond:.3g})")
    hit = np.clip(hit, 0.0, None)
    hit *= U.sum() / hit.sum()
    out = np.zeros(n)
    for c in leaves:
        idx = np.nonzero(lab == c)[0]
        mass = hit[idx].sum()
        if len(idx) == 1:
            out[idx] = mass
            continue
        # stationary law of the closed class
        A = np.vstack([P[np.ix_(idx, idx)].T - np.eye(len(idx)), np.ones(len(idx))])
        b = np.zeros(len(idx) + 1)
        b[-1] = 1.0
        pi = np.linalg.lstsq(A, b, rcond=None)[0]
        out[idx] = mass * np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()
    return out, rec


# ---------------------------------------------------------------------------
# presentation


def cycle_display(graph: WellGraph, report: CycleReport, c: Cycle) -> list:
    """Cycle members plus the interior vertices whose whole subtree lies inside it."""
    members = {report.names[i] for i in c.members}
    out = sorted(members, key=_vertex_key)
    for e in graph.merged:
        leaves = {graph.edges[l].bottom_vertex for l in graph.subtree_leaves(e)}
        if leaves <= members:
            out.append(graph.edges[e].bottom_vertex)
    return sorted(out, key=_vertex_key)


def _vertex_key(name):
    return (int(name[1:]), name[0])


def analyze(graph: WellGraph, rate_table: RateTable, branch: BranchTable, U0=None) -> dict:
    """Cycle report, exit profiles and timeline as plain data."""
    names, V = exterior_V(graph, rate_table)
    report = cycle_hierarchy(names, V)
    timeline = metastable_timeline(graph, rate_table, branch, U0, report)
    cycles = []
    for i, c in enumerate(report.cycles):
        prof = exit_profile(c, V, graph, branch, names)
        cycles.append({
            "members": [names[j] for j in sorted(c.members)],
            "display": cycle_display(graph, report, c),
            "rank": c.rank,
            "A": c.A,
            "inner": c.inner,
            "C": c.C,
            "ground": [names[j] for j in c.ground],
            "exit_arrows": [[names[x], names[y]] for x, y in c.exits],
            "exit_via": list(prof.via),
            "landing": None if prof.landing is None else prof.landing.tolist(),
            "multi_landing": prof.multi_landing,
            "parent": report.parent.get(i),
        })
    notes = list(report.notes)
    # an exit from a single exterior vertex that lands back below an interior
    # vertex is recorded as such, not as a jump to the neighbouring well
    for entry in cycles:
        if len(entry["members"]) == 1 and entry["landing"] is not None:
            back = [names[k] for k, w in enumerate(entry["landing"]) if w > 0 and names[k] != entry["members"][0]]
            if entry["exit_via"] and len(back) > 1:
                notes.append(f"exit from {entry['members'][0]} at scale {entry['C']:g} descends from "
                             f"{'/'.join(entry['exit_via'])} onto {', '.join(back)}")
    return {
        "exterior": names,
        "V": [[float(v) for v in row] for row in V],
        "cycles": cycles,
        "timeline": [{"scale": t.scale, "distribution": t.distribution.tolist(), "absorbing": list(t.absorbing)}
                     for t in timeline],
        "notes": notes,
    }
