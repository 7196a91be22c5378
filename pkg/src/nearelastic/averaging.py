"""Averaged motion on the merge tree.

On well i the energy of the averaged motion obeys
dH/dt = -m_i sqrt(2H) / (2 D_i), with m_i = E xi + E eta, so sqrt(H) falls
linearly in time. At a merge vertex the motion continues into one of the two
child wells and stops at a leaf floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .topology import GraphPath, WellGraph, locate

SQRT2 = math.sqrt(2.0)


class DownhillOnlyError(ValueError):
    """The averaged motion only loses energy."""


@dataclass(frozen=True)
class EdgeDrift:
    """Drift data of one well: mean kick sum ``m`` and width ``D``."""

    edge: int
    m: float
    D: float

    def __post_init__(self):
        if not (self.m > 0 and self.D > 0):
            raise ValueError("EdgeDrift needs m > 0 and D > 0")

    def rate(self, H):
        """dH/dt at energy H."""
        return -self.m * np.sqrt(2.0 * np.asarray(H)) / (2.0 * self.D)


def edge_drift(graph: WellGraph, e: int) -> EdgeDrift:
    edge = graph.edges[e]
    return EdgeDrift(e, edge.pair.drift, edge.width)


def edge_trajectory(drift: EdgeDrift, H_start: float, H_end: float):
    """Closed-form averaged energy from ``H_start`` down to ``H_end``.

    Returns
    -------
    H : callable
        H(t) = (sqrt(H_start) - t m / (2 sqrt(2) D))**2 for 0 <= t <= duration.
    duration : float
        2 sqrt(2) D (sqrt(H_start) - sqrt(H_end)) / m.
    """
    if H_end > H_start:
        raise DownhillOnlyError(f"averaged motion cannot climb from {H_start!r} to {H_end!r}")
    if H_end < 0:
        raise ValueError("H_end must be nonnegative")
    r0 = math.sqrt(H_start)
    c = drift.m / (2.0 * SQRT2 * drift.D)
    duration = 2.0 * SQRT2 * drift.D * (r0 - math.sqrt(H_end)) / drift.m

    def H(t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, duration)
        return (r0 - t * c) ** 2

    return H, duration


def duration(drift: EdgeDrift, H_start: float, H_end: float) -> float:
    return edge_trajectory(drift, H_start, H_end)[1]


def _child_for(graph, e, choice):
    edge = graph.edges[e]
    if choice in ("left", "L", 0, False):
        return edge.children[0]
    if choice in ("right", "R", 1, True):
        return edge.children[1]
    if isinstance(choice, (int, np.integer)) and int(choice) in edge.children:
        return int(choice)
    raise ValueError(f"bad decision {choice!r} at vertex {edge.bottom_vertex}")


def limit_path(graph: WellGraph, H0: float, decisions, start_edge: int | None = None) -> GraphPath:
    """Averaged path from ``H0`` down to a leaf floor.

    Parameters
    ----------
    decisions : mapping or sequence
        Either ``{vertex name: "left" | "right"}`` or a sequence of choices
        consumed in the order vertices are visited.
    start_edge : int, optional
        Edge holding ``H0``; defaults to the root.
    """
    e = graph.root if start_edge is None else int(start_edge)
    edge = graph.edges[e]
    if not edge.bottom <= H0 <= edge.top:
        raise ValueError(f"H0 = {H0!r} is outside the energy interval of well {edge.number}")
    seq = None if isinstance(decisions, Mapping) else list(decisions or [])
    times, energies, edges = [0.0], [float(H0)], []
    t, H = 0.0, float(H0)
    while True:
        edge = graph.edges[e]
        dur = duration(edge_drift(graph, e), H, edge.bottom)
        t += dur
        times.append(t)
        energies.append(edge.bottom)
        edges.append(e)
        H = edge.bottom
        if edge.is_leaf:
            break
        name = edge.bottom_vertex
        if seq is None:
            if name not in decisions:
                raise KeyError(f"no decision supplied for vertex {name}")
            choice = decisions[name]
        else:
            if not seq:
                raise KeyError(f"no decision supplied for vertex {name}")
            choice = seq.pop(0)
        e = _child_for(graph, e, choice)
    return GraphPath(np.array(times), np.array(energies), tuple(edges), ("sqrt",) * len(edges))


def sample_limit_process(graph: WellGraph, H0: float, branch_table, stream, start_edge: int | None = None) -> GraphPath:
    """Limit path with independent random decisions at each vertex.

    ``branch_table`` maps interior vertex names to the probability of going
    left (a plain dict or a :class:`nearelastic.meta.BranchTable`).
    """
    e = graph.root if start_edge is None else int(start_edge)
    choices = {}
    stack = [e]
    # draw in a fixed order (depth first, left to right) so a given stream
    # always produces the same decisions
    while stack:
        cur = graph.edges[stack.pop()]
        if cur.is_leaf:
            continue
        p = _p_left(branch_table, cur.bottom_vertex)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"invalid branch probability {p!r} at {cur.bottom_vertex}")
        choices[cur.bottom_vertex] = "left" if stream.random() < p else "right"
        stack.extend(reversed(cur.children))
    return limit_path(graph, H0, choices, start_edge=e)


def _p_left(table, name):
    if hasattr(table, "p_left"):
        return float(table.p_left(name))
    return float(table[name])


def terminal_leaf(path: GraphPath) -> int:
    return path.edges[-1]


# ---------------------------------------------------------------------------
# empirical comparison


def observed_decisions(graph: WellGraph, record) -> dict:
    """First child entered below each merge vertex in a simulated record."""
    seq = np.concatenate([record.ev_edge, [record.final.edge]]) if len(record.ev_edge) else record.edge
    seq = seq[seq >= 0]
    out = {}
    for a, b in zip(seq[:-1], seq[1:]):
        a, b = int(a), int(b)
        if a == b:
            continue
        # descents may pass several vertices in one kick
        chain = graph.ancestors(b)
        if a in chain:
            for lower, upper in zip(chain, chain[1:]):
                name = graph.edges[upper].bottom_vertex
                out.setdefault(name, "left" if graph.edges[upper].children[0] == lower else "right")
                if upper == a:
                    break
    return out


def compare(record, path: GraphPath, middle: float = 0.5) -> dict:
    """Distance between a simulated record and a limit path.

    The sup of |H_hat - H(t)| is taken over grid times up to the first vertex
    arrival. Each later segment is compared only while the simulated edges
    agree with the path's edge over the central ``middle`` fraction of the
    segment; comparison stops at the first disagreement.
    """
    t = record.t
    Hh = record.H_hat
    ok = ~np.isnan(Hh)
    t_vertex = float(path.times[1]) if path.n_segments > 0 else 0.0
    phi = path.energy_at(t)
    err = np.abs(Hh - phi)
    first = ok & (t <= t_vertex)
    sup_first = float(np.max(err[first])) if np.any(first) else float("nan")
    segments = []
    first_bad = None
    sup_cond = sup_first
    for k, (t0, t1, _, _, e, _) in enumerate(path.segments()):
        inseg = ok & (t >= t0) & (t <= t1)
        pad = 0.5 * (1 - middle) * (t1 - t0)
        core = ok & (t >= t0 + pad) & (t <= t1 - pad)
        seen = sorted(set(int(x) for x in record.edge[core]))
        agree = bool(np.all(record.edge[core] == e)) if np.any(core) else None
        sup = float(np.max(err[inseg])) if np.any(inseg) else None
        segments.append({"segment": k, "edge": e + 1, "t0": t0, "t1": t1, "agree": agree, "sup": sup,
                         "observed_edges": [s + 1 for s in seen]})
        if first_bad is None and agree is False:
            first_bad = k
        if first_bad is None and sup is not None:
            sup_cond = max(sup_cond, sup)
    return {
        "first_vertex_time": t_vertex,
        "sup_before_vertex": sup_first,
        "sup_until_disagreement": sup_cond,
        "first_disagreement": first_bad,
        "segments": segments,
    }


def sup_distance(record, path: GraphPath, t_max: float | None = None) -> float:
    """max |H_hat - H(t)| over grid times up to ``t_max`` (default: first vertex)."""
    if t_max is None:
        t_max = float(path.times[1])
    sel = (record.t <= t_max) & ~np.isnan(record.H_hat)
    return float(np.max(np.abs(record.H_hat[sel] - path.energy_at(record.t[sel]))))


def start_position(graph: WellGraph, e: int) -> float:
    """Midpoint of well ``e``'s span, a default start position."""
    edge = graph.edges[e]
    return 0.5 * (edge.left + edge.right)


def check_start(graph: WellGraph, H0: float, q0: float, start_edge: int | None):
    e = locate(graph, H0, q0)
    if start_edge is not None and e != start_edge:
        raise ValueError("start state is not in the requested well")
    return e


def terminal_distribution(paths: Sequence[GraphPath], n_leaves: int) -> np.ndarray:
    counts = np.bincount([terminal_leaf(p) for p in paths], minlength=n_leaves)
    return counts / max(len(paths), 1)
