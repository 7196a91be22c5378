"""Well geometry and the merge tree of wells.

A system of walls q_1 < ... < q_n splits the line into n - 1 leaf wells.
Interior walls have finite heights, the two end walls are infinitely high.
Above an interior wall's height the two wells on either side act as one
bigger well, so the wells form a binary merge tree: leaves are numbered
1..L from left to right and merged wells L+1..2L-1 in order of increasing
merge height. Each well is an edge of the tree with an energy interval
[bottom, top]; the bottom of a leaf is its floor (exterior vertex ``V<k>``)
and the bottom of a merged well is its merge height (interior vertex
``O<l>``).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, TopologyError
from .kernels import KickPair


@dataclass(frozen=True)
class WellSystem:
    """Walls, floors, energy cap and kicks of a multi-well system.

    Parameters
    ----------
    wall_positions : sequence of float
        Strictly increasing positions q_1 < ... < q_n, n >= 2.
    interior_wall_heights : sequence of float
        Heights of q_2 ... q_{n-1}.
    leaf_floors : sequence of float
        Floor energy of each leaf well, left to right.
    energy_cap : float
        Hard upper bound on the energy.
    kick_pairs : sequence of KickPair, optional
        One pair per well number 1..2L-1. May be omitted for pure geometry.
    """

    wall_positions: tuple
    interior_wall_heights: tuple
    leaf_floors: tuple
    energy_cap: float
    kick_pairs: tuple | None = None

    def __post_init__(self):
        q = tuple(float(v) for v in self.wall_positions)
        h = tuple(float(v) for v in self.interior_wall_heights)
        f = tuple(float(v) for v in self.leaf_floors)
        object.__setattr__(self, "wall_positions", q)
        object.__setattr__(self, "interior_wall_heights", h)
        object.__setattr__(self, "leaf_floors", f)
        object.__setattr__(self, "energy_cap", float(self.energy_cap))
        if self.kick_pairs is not None:
            object.__setattr__(self, "kick_pairs", tuple(self.kick_pairs))
        self.validate()

    @property
    def n_leaves(self) -> int:
        return len(self.wall_positions) - 1

    def validate(self):
        q, h, f = self.wall_positions, self.interior_wall_heights, self.leaf_floors
        if len(q) < 2:
            raise TopologyError("at least two walls are required")
        if any(b <= a for a, b in zip(q, q[1:])):
            raise TopologyError("wall positions must be strictly increasing")
        if len(h) != len(q) - 2:
            raise TopologyError(f"expected {len(q) - 2} interior wall heights, got {len(h)}")
        if len(f) != len(q) - 1:
            raise TopologyError(f"expected {len(q) - 1} leaf floors, got {len(f)}")
        for i in range(len(h)):
            for j in range(i + 1, len(h)):
                if h[i] == h[j]:
                    raise TopologyError(
                        f"tied wall heights: wall {i + 2} (q={q[i + 1]!r}) and "
                        f"wall {j + 2} (q={q[j + 1]!r}) both at {h[i]!r}"
                    )
        for i in range(len(f)):
            for j in range(i + 1, len(f)):
                if f[i] == f[j]:
                    raise TopologyError(f"tied floors: leaf {i + 1} and leaf {j + 1} both at {f[i]!r}")
        walls = (math.inf,) + h + (math.inf,)
        for k, fl in enumerate(f):
            if not fl > 0:
                raise TopologyError(f"floor of leaf {k + 1} must be positive")
            if not fl < min(walls[k], walls[k + 1]):
                raise TopologyError(f"floor of leaf {k + 1} is not below both of its walls")
        top = max(h) if h else max(f)
        if not self.energy_cap > top:
            raise TopologyError("energy cap must exceed every wall height and floor")
        n_edges = 2 * (len(q) - 1) - 1
        if self.kick_pairs is not None and len(self.kick_pairs) != n_edges:
            raise ConfigError(f"expected {n_edges} kick pairs (one per well), got {len(self.kick_pairs)}")


@dataclass(frozen=True)
class Edge:
    """One well of the merge tree.

    ``number`` is the 1-based well number, ``index`` the 0-based position in
    ``WellGraph.edges``. ``split`` is the position of the wall separating the
    two children (``nan`` for leaves).
    """

    index: int
    left: float
    right: float
    bottom: float
    top: float
    parent: int
    children: tuple
    split: float
    pair: KickPair | None

    @property
    def number(self) -> int:
        return self.index + 1

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def bottom_vertex(self) -> str:
        return f"V{self.number}" if self.is_leaf else f"O{self.number}"


@dataclass(frozen=True)
class Vertex:
    name: str
    energy: float
    edge: int  # edge whose bottom this vertex is
    interior: bool


@dataclass(frozen=True, eq=False)
class WellGraph:
    """Merge tree of a :class:`WellSystem`; immutable after construction."""

    system: WellSystem
    edges: tuple
    root: int
    _geom: tuple = field(default=None, repr=False)

    # -- sizes and lookups ---------------------------------------------------

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_leaves(self) -> int:
        return (len(self.edges) + 1) // 2

    @property
    def leaves(self) -> list[int]:
        return list(range(self.n_leaves))

    @property
    def merged(self) -> list[int]:
        return list(range(self.n_leaves, self.n_edges))

    @property
    def vertices(self) -> list[Vertex]:
        return [Vertex(e.bottom_vertex, e.bottom, e.index, not e.is_leaf) for e in self.edges]

    @property
    def exterior_names(self) -> list[str]:
        return [f"V{k + 1}" for k in self.leaves]

    @property
    def interior_names(self) -> list[str]:
        return [f"O{e + 1}" for e in self.merged]

    def vertex(self, name: str) -> Vertex:
        for v in self.vertices:
            if v.name == name:
                return v
        raise KeyError(f"no vertex {name!r}")

    def vertex_edge(self, name: str) -> int:
        """Index of the edge whose bottom is vertex ``name``."""
        return self.vertex(name).edge

    @property
    def bound(self) -> float:
        """Largest kick bound M over all wells."""
        return max(e.pair.bound for e in self.edges if e.pair is not None)

    @property
    def min_gap(self) -> float:
        """Smallest energy extent of any edge interval."""
        return min(e.top - e.bottom for e in self.edges)

    def ancestors(self, e: int) -> list[int]:
        """Edges from ``e`` up to the root, inclusive."""
        out = [e]
        while self.edges[out[-1]].parent >= 0:
            out.append(self.edges[out[-1]].parent)
        return out

    def lca(self, a: int, b: int) -> int:
        """Lowest common ancestor edge of edges ``a`` and ``b``."""
        up = set(self.ancestors(a))
        for e in self.ancestors(b):
            if e in up:
                return e
        raise AssertionError("tree has no common root")

    def subtree_leaves(self, e: int) -> list[int]:
        edge = self.edges[e]
        if edge.is_leaf:
            return [e]
        return self.subtree_leaves(edge.children[0]) + self.subtree_leaves(edge.children[1])

    def adjacent_pairs(self) -> list[tuple[str, str]]:
        """(lower vertex, upper vertex) for every non-root edge."""
        out = []
        for e in self.edges:
            if e.parent >= 0:
                out.append((e.bottom_vertex, self.edges[e.parent].bottom_vertex))
        return out

    def connecting_edge(self, a: str, b: str) -> int:
        """Edge joining adjacent vertices ``a`` and ``b`` (in either order)."""
        ea, eb = self.vertex_edge(a), self.vertex_edge(b)
        if self.edges[ea].parent == eb:
            return ea
        if self.edges[eb].parent == ea:
            return eb
        raise KeyError(f"vertices {a} and {b} are not adjacent")

    # -- arrays for the compiled simulator ---------------------------------

    def geometry(self) -> tuple[np.ndarray, np.ndarray]:
        """Float and int tables describing the tree.

        Float columns: left, right, bottom, top, split. Int columns:
        parent, left child, right child, is_leaf.
        """
        gf = np.array([[e.left, e.right, e.bottom, e.top, e.split] for e in self.edges], dtype=np.float64)
        gi = np.array(
            [
                [e.parent, e.children[0] if e.children else -1, e.children[1] if e.children else -1, int(e.is_leaf)]
                for e in self.edges
            ],
            dtype=np.int64,
        )
        gf.setflags(write=False)
        gi.setflags(write=False)
        return gf, gi

    def to_dict(self) -> dict:
        """Normalized description for reports."""
        return {
            "n_edges": self.n_edges,
            "root": self.root + 1,
            "energy_cap": self.system.energy_cap,
            "edges": [
                {
                    "number": e.number,
                    "interval": [e.bottom, e.top],
                    "span": [e.left, e.right],
                    "width": e.width,
                    "bottom_vertex": e.bottom_vertex,
                    "parent": e.parent + 1 if e.parent >= 0 else None,
                    "children": [c + 1 for c in e.children],
                    "kicks": [str(e.pair.xi), str(e.pair.eta)] if e.pair is not None else None,
                }
                for e in self.edges
            ],
        }


def build_graph(system: WellSystem) -> WellGraph:
    """Merge tree of ``system``.

    Wells are merged across interior walls in order of increasing wall
    height, which is the same tree obtained by splitting every region at its
    highest interior wall. Leaves keep numbers 1..L; each merge creates the
    next number.
    """
    q = system.wall_positions
    h = system.interior_wall_heights
    L = system.n_leaves
    pairs = system.kick_pairs
    # cluster bookkeeping: cluster id -> (left wall idx, right wall idx, top edge)
    rec = []  # mutable records: [left, right, bottom, top, parent, children, split]
    for k in range(L):
        rec.append([q[k], q[k + 1], system.leaf_floors[k], math.inf, -1, (), math.nan])
    owner = list(range(L))  # leaf -> current top edge of its cluster

    def top_of(leaf):
        e = owner[leaf]
        while rec[e][4] >= 0:
            e = rec[e][4]
        return e

    for j in sorted(range(len(h)), key=lambda j: h[j]):
        height = h[j]
        a, b = top_of(j), top_of(j + 1)
        new = len(rec)
        rec[a][3] = height
        rec[b][3] = height
        rec[a][4] = new
        rec[b][4] = new
        rec.append([rec[a][0], rec[b][1], height, math.inf, -1, (a, b), q[j + 1]])
    root = len(rec) - 1
    rec[root][3] = system.energy_cap

    edges = []
    for i, r in enumerate(rec):
        pair = pairs[i] if pairs is not None else None
        edges.append(Edge(i, r[0], r[1], r[2], r[3], r[4], r[5], r[6], pair))
    for e in edges:
        if not e.bottom < e.top:
            raise TopologyError(f"well {e.number} has an empty energy interval [{e.bottom}, {e.top}]")
    return WellGraph(system, tuple(edges), root)


def locate(graph: WellGraph, H: float, q: float) -> int:
    """Index of the edge containing the state (H, q).

    At exactly a merge energy the merged (parent) well is returned. A
    position exactly on a submerged wall belongs to the well on its left.
    """
    sys_ = graph.system
    if not sys_.wall_positions[0] <= q <= sys_.wall_positions[-1]:
        raise ValueError(f"position {q!r} outside the domain")
    if H > sys_.energy_cap:
        raise ValueError(f"energy {H!r} above the cap")
    e = graph.root
    edges = graph.edges
    while True:
        edge = edges[e]
        if edge.is_leaf:
            if H < edge.bottom:
                raise ValueError(f"energy {H!r} below the floor of well {edge.number}")
            return e
        if H >= edge.bottom:
            return e
        e = edge.children[0] if q <= edge.split else edge.children[1]


def locate_leaf_of_position(graph: WellGraph, q: float) -> int:
    """Leaf well whose span contains ``q`` (left well on a wall)."""
    qs = graph.system.wall_positions
    k = bisect.bisect_left(qs, q) - 1
    return min(max(k, 0), graph.n_leaves - 1)


# ---------------------------------------------------------------------------
# paths on the graph


@dataclass(frozen=True)
class GraphPath:
    """Continuous energy path with an edge label per segment.

    Parameters
    ----------
    times : array, shape (k+1,)
        Breakpoint times, nondecreasing.
    energies : array, shape (k+1,)
        Energy at each breakpoint.
    edges : tuple of int, length k
        Edge index of each segment.
    shapes : tuple of str, length k
        ``"linear"`` (energy affine in t) or ``"sqrt"`` (square root of the
        energy affine in t, the shape of the averaged motion).
    """

    times: np.ndarray
    energies: np.ndarray
    edges: tuple
    shapes: tuple = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        H = np.asarray(self.energies, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "energies", H)
        object.__setattr__(self, "edges", tuple(int(e) for e in self.edges))
        shapes = self.shapes if self.shapes is not None else ("linear",) * len(self.edges)
        object.__setattr__(self, "shapes", tuple(shapes))
        if t.ndim != 1 or t.shape != H.shape or len(self.edges) != len(t) - 1 or len(self.shapes) != len(self.edges):
            raise ValueError("inconsistent path arrays")
        if np.any(np.diff(t) < 0):
            raise ValueError("path times must be nondecreasing")
        if any(s not in ("linear", "sqrt") for s in self.shapes):
            raise ValueError("segment shape must be 'linear' or 'sqrt'")

    @property
    def n_segments(self) -> int:
        return len(self.edges)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def _segment(self, t):
        k = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(k, 0, max(self.n_segments - 1, 0))

    def energy_at(self, t):
        """Energy at time(s) ``t``; constant outside the time range."""
        t = np.asarray(t, dtype=float)
        if self.n_segments == 0:
            return np.full_like(t, self.energies[0])
        tc = np.clip(t, self.times[0], self.times[-1])
        k = self._segment(tc)
        t0, t1 = self.times[k], self.times[k + 1]
        h0, h1 = self.energies[k], self.energies[k + 1]
        dt = t1 - t0
        u = np.where(dt > 0, (tc - t0) / np.where(dt > 0, dt, 1.0), 0.0)
        lin = h0 + (h1 - h0) * u
        sq = (np.sqrt(h0) + (np.sqrt(h1) - np.sqrt(h0)) * u) ** 2
        is_sqrt = np.array([s == "sqrt" for s in self.shapes])[k]
        return np.where(is_sqrt, sq, lin)

    def slope_at(self, t):
        """Time derivative of the energy inside segments."""
        t = np.asarray(t, dtype=float)
        k = self._segment(np.clip(t, self.times[0], self.times[-1]))
        t0, t1 = self.times[k], self.times[k + 1]
        h0, h1 = self.energies[k], self.energies[k + 1]
        dt = np.where(t1 > t0, t1 - t0, np.inf)
        lin = (h1 - h0) / dt
        r0, r1 = np.sqrt(h0), np.sqrt(h1)
        u = np.clip((t - t0) / dt, 0, 1)
        sq = 2 * (r0 + (r1 - r0) * u) * (r1 - r0) / dt
        is_sqrt = np.array([s == "sqrt" for s in self.shapes])[k]
        return np.where(is_sqrt, sq, lin)

    def edge_at(self, t):
        t = np.asarray(t, dtype=float)
        k = self._segment(np.clip(t, self.times[0], self.times[-1]))
        return np.asarray(self.edges)[k]

    def validate(self, graph: WellGraph, tol: float = 1e-12):
        """Check that each segment stays inside its edge and that edges only
        change at vertex energies."""
        for k, e in enumerate(self.edges):
            edge = graph.edges[e]
            lo, hi = sorted((self.energies[k], self.energies[k + 1]))
            if lo < edge.bottom - tol or hi > edge.top + tol:
                raise ValueError(f"segment {k} leaves the energy interval of well {edge.number}")
            if k > 0 and self.edges[k - 1] != e:
                prev = graph.edges[self.edges[k - 1]]
                h = self.energies[k]
                junction = edge.bottom if prev.parent == e else prev.bottom
                if edge.parent != prev.index and prev.parent != e:
                    raise ValueError(f"segments {k - 1} and {k} are on non-adjacent wells")
                if abs(h - junction) > tol:
                    raise ValueError(f"edge label changes away from a vertex at segment {k}")
        return True

    def segments(self):
        """Iterate over (t0, t1, H0, H1, edge, shape)."""
        for k in range(self.n_segments):
            yield (
                float(self.times[k]),
                float(self.times[k + 1]),
                float(self.energies[k]),
                float(self.energies[k + 1]),
                self.edges[k],
                self.shapes[k],
            )


def make_path(times: Sequence[float], energies: Sequence[float], edges: Sequence[int], shapes=None) -> GraphPath:
    return GraphPath(np.asarray(times, float), np.asarray(energies, float), tuple(edges), shapes)
