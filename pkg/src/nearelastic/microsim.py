"""Event-driven simulation of the particle with random wall kicks.

Between collisions the particle moves at speed sqrt(2H). At the left wall of
its current well the energy drops by ``eps * xi``, at the right wall by
``eps * eta``, where (xi, eta) is the kick pair of that well. Leaf wells clamp
the energy at their floor. After every kick the well is relocated on the
merge tree. Times reported to callers are rescaled, ``t = eps * natural``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _jit
from .errors import CapExceeded, ConfigError, NoDecision, SamplingUnsupported
from .kernels import split
from .topology import WellGraph, locate

LEFT, RIGHT = 0, 1
BLOCK = 8192  # replicas per stream block; fixed so results do not depend on workers


def check_epsilon(graph: WellGraph, epsilon: float):
    """Reject step sizes for which one kick can jump over a whole well interval."""
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    M = graph.bound
    if epsilon * M > 0.5 * graph.min_gap:
        raise ConfigError(
            f"epsilon*M = {epsilon * M!r} exceeds half the smallest energy gap {graph.min_gap!r}; use a smaller epsilon"
        )


class KickBuffers:
    """Per (well, side) buffers of kicks drawn on demand from one stream.

    Buffers start empty and are filled the first time the simulator needs a
    kick there, so the draw order depends only on the trajectory.
    """

    def __init__(self, graph: WellGraph, stream, size: int = 4096, samplers=None):
        n = graph.n_edges
        self.stream = stream
        self.size = int(size)
        self.buf = np.zeros((n, 2, self.size))
        self.ptr = np.full((n, 2), self.size, dtype=np.int64)
        if samplers is None:
            samplers = {}
        self.samplers = []
        for e in graph.edges:
            row = []
            for side in (LEFT, RIGHT):
                s = samplers.get((e.index, side))
                if s is None and e.pair is not None:
                    spec = e.pair.xi if side == LEFT else e.pair.eta
                    if spec.family == "twopoint":
                        raise SamplingUnsupported(f"well {e.number} uses {spec}, which cannot be simulated")
                    s = spec.sample
                row.append(s)
            self.samplers.append(row)

    def refill(self, e: int, side: int):
        s = self.samplers[e][side]
        if s is None:
            raise ConfigError(f"well {e + 1} has no kick distribution")
        self.buf[e, side, :] = s(self.stream, self.size)
        self.ptr[e, side] = 0


# ---------------------------------------------------------------------------
# single steps


@dataclass
class ParticleState:
    """Microscopic state. ``natural_time`` is unscaled."""

    edge: int
    H: float
    q: float
    direction: int = -1
    natural_time: float = 0.0
    collision_counts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CollisionEvent:
    natural_time: float
    side: int
    kick: float
    H_pre: float
    H_post: float
    edge_pre: int
    edge_post: int


def initial_state(graph: WellGraph, H0: float, q0: float, direction: int = -1) -> ParticleState:
    return ParticleState(locate(graph, H0, q0), float(H0), float(q0), int(direction))


def step(state: ParticleState, graph: WellGraph, epsilon: float, stream, kick: float | None = None):
    """Fly to the next wall, apply its kick and relocate.

    Parameters
    ----------
    kick : float, optional
        Use this kick value instead of drawing one from ``stream``.

    Returns
    -------
    (ParticleState, CollisionEvent)
    """
    gf, gi = _geometry(graph)
    e = state.edge
    side = RIGHT if state.direction > 0 else LEFT
    wall = gf[e, side]
    dt = abs(wall - state.q) / math.sqrt(2.0 * state.H)
    if kick is None:
        pair = graph.edges[e].pair
        kick = (pair.xi if side == LEFT else pair.eta).sample(stream)
    en, Hn, capflag = _jit.apply_kick(gf, gi, e, state.H, wall, float(kick), float(epsilon), graph.system.energy_cap)
    if capflag:
        raise CapExceeded(f"energy {Hn!r} exceeds the cap {graph.system.energy_cap!r}")
    counts = dict(state.collision_counts)
    counts[(e, side)] = counts.get((e, side), 0) + 1
    t = state.natural_time + dt
    new = ParticleState(int(en), float(Hn), float(wall), -state.direction, t, counts)
    return new, CollisionEvent(t, side, float(kick), state.H, float(Hn), e, int(en))


_GEOM_CACHE: dict = {}


def _geometry(graph):
    key = id(graph)
    hit = _GEOM_CACHE.get(key)
    if hit is None or hit[0] is not graph:
        hit = (graph, graph.geometry())
        _GEOM_CACHE[key] = hit
    return hit[1]


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class TrajectoryRecord:
    """Grid samples and collision events of one run.

    Grid arrays: ``t`` (rescaled), ``H_step`` (energy), ``H_hat`` (piecewise
    linear interpolation through the post-collision energies), ``edge``.
    Event arrays: ``ev_t`` (rescaled), ``ev_side``, ``ev_kick``, ``ev_H_pre``,
    ``ev_H_post``, ``ev_edge``.
    """

    epsilon: float
    t: np.ndarray
    H_step: np.ndarray
    H_hat: np.ndarray
    edge: np.ndarray
    ev_t: np.ndarray
    ev_side: np.ndarray
    ev_kick: np.ndarray
    ev_H_pre: np.ndarray
    ev_H_post: np.ndarray
    ev_edge: np.ndarray
    n_collisions: int
    cap_exceeded: bool
    final: ParticleState

    def corners(self):
        """Times and energies of the piecewise linear interpolation."""
        t = np.concatenate([[0.0], self.ev_t])
        H = np.concatenate([[self.H_step[0]], self.ev_H_post])
        return t, H


def run(graph: WellGraph, H0: float, q0: float, epsilon: float, T: float, grid_dt: float, stream,
        direction: int = -1, record_events: bool = True, buffer_size: int = 4096,
        check: bool = True) -> TrajectoryRecord:
    """Simulate one trajectory on rescaled time [0, T]."""
    if not (T > 0 and grid_dt > 0):
        raise ValueError("T and grid_dt must be positive")
    if check:
        check_epsilon(graph, epsilon)
    gf, gi = _geometry(graph)
    e0 = locate(graph, H0, q0)
    kb = KickBuffers(graph, stream, buffer_size)
    n_grid = int(math.floor(T / grid_dt + 1e-9)) + 1
    g_H = np.full(n_grid, np.nan)
    g_Hh = np.full(n_grid, np.nan)
    g_e = np.full(n_grid, -1, dtype=np.int64)
    cap_ev = 1024 if record_events else 0
    ev = np.zeros((cap_ev, 6))
    sf = np.array([H0, q0, 0.0])
    si = np.array([e0, -1 if direction < 0 else 1, 0, 0, 0, 0, 0], dtype=np.int64)
    t_end = T / epsilon
    gdt = grid_dt / epsilon
    cap_hit = False
    while True:
        st = _jit.run_kernel(gf, gi, kb.buf, kb.ptr, sf, si, float(epsilon), graph.system.energy_cap,
                             t_end, gdt, n_grid, g_H, g_Hh, g_e, ev, record_events)
        if st == _jit.DONE:
            break
        if st == _jit.REFILL:
            kb.refill(int(si[5]), int(si[6]))
        elif st == _jit.GROW:
            ev = np.concatenate([ev, np.zeros_like(ev)])
        else:
            cap_hit = True
            break
    n_ev = int(si[2])
    ev = ev[:n_ev]
    counts = {}
    for e, side in zip(ev[:, 5].astype(np.int64), ev[:, 1].astype(np.int64)):
        counts[(int(e), int(side))] = counts.get((int(e), int(side)), 0) + 1
    final = ParticleState(int(si[0]), float(sf[0]), float(sf[1]), int(si[1]), float(sf[2]), counts)
    return TrajectoryRecord(
        epsilon=float(epsilon),
        t=np.arange(n_grid) * grid_dt,
        H_step=g_H,
        H_hat=g_Hh,
        edge=g_e,
        ev_t=ev[:, 0] * epsilon,
        ev_side=ev[:, 1].astype(np.int64),
        ev_kick=ev[:, 2].copy(),
        ev_H_pre=ev[:, 3].copy(),
        ev_H_post=ev[:, 4].copy(),
        ev_edge=ev[:, 5].astype(np.int64),
        n_collisions=int(si[4]),
        cap_exceeded=cap_hit,
        final=final,
    )


# ---------------------------------------------------------------------------
# replicated runs


def _no_tilt(n):
    return np.zeros((n, 2)), np.zeros((n, 2))


def _drive_block(graph, stream, mode, eps, level, t_end, max_coll, e0, H0, q0, d0, n_rep,
                 samplers, tilt, buffer_size):
    gf, gi = _geometry(graph)
    kb = KickBuffers(graph, stream, buffer_size, samplers)
    tb, tm = tilt if tilt is not None else _no_tilt(graph.n_edges)
    sf = np.zeros(4)
    si = np.zeros(7, dtype=np.int64)
    out_i = np.zeros(n_rep, dtype=np.int64)
    out_f = np.zeros((n_rep, 2))
    while True:
        st = _jit.batch_kernel(gf, gi, kb.buf, kb.ptr, tb, tm, mode, float(eps), graph.system.energy_cap,
                               float(level), float(t_end), int(max_coll), int(e0), float(H0), float(q0),
                               int(d0), int(n_rep), sf, si, out_i, out_f)
        if st == _jit.DONE:
            return out_i, out_f
        kb.refill(int(si[5]), int(si[6]))


def _run_blocks(n_runs, stream, workers, fn):
    n_blocks = max(1, -(-int(n_runs) // BLOCK))
    streams = split(stream, n_blocks)
    sizes = [min(BLOCK, n_runs - b * BLOCK) for b in range(n_blocks)]
    jobs = list(zip(streams, sizes))
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda job: fn(*job), jobs))
    else:
        parts = [fn(*job) for job in jobs]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def default_max_collisions(graph: WellGraph, start_edge: int, H0: float, epsilon: float) -> int:
    """Generous collision budget for falling from H0 to the lowest floor."""
    pair = graph.edges[start_edge].pair
    drop = H0 - min(graph.system.leaf_floors)
    return int(200 * drop / (epsilon * pair.drift)) + 10_000


@dataclass(frozen=True)
class BranchCounts:
    """Leaf reached by each replica of a branching experiment."""

    leaves: np.ndarray  # leaf index per replica, -1 no decision, -2 cap
    times: np.ndarray

    @property
    def n(self) -> int:
        return len(self.leaves)

    def counts(self, n_leaves: int) -> np.ndarray:
        ok = self.leaves[self.leaves >= 0]
        return np.bincount(ok, minlength=n_leaves)

    @property
    def n_undecided(self) -> int:
        return int(np.sum(self.leaves < 0))


def branch_runs(graph: WellGraph, start_edge: int, H0: float, q0: float, epsilon: float, n_runs: int,
                stream, direction: int = -1, max_collisions: int | None = None, workers: int = 1,
                buffer_size: int = 1 << 14, check: bool = True) -> BranchCounts:
    """Replicated :func:`first_branch`, blocked over split streams."""
    if check:
        check_epsilon(graph, epsilon)
    if graph.edges[start_edge].is_leaf:
        raise ValueError("branching starts on a merged well")
    if locate(graph, H0, q0) != start_edge:
        raise ValueError("start state is not inside the start well")
    if max_collisions is None:
        max_collisions = default_max_collisions(graph, start_edge, H0, epsilon)
    d0 = -1 if direction < 0 else 1

    def fn(s, n):
        return _drive_block(graph, s, _jit.MODE_BRANCH, epsilon, 0.0, 0.0, max_collisions, start_edge, H0, q0,
                            d0, n, None, None, buffer_size)

    leaves, f = _run_blocks(n_runs, stream, workers, fn)
    return BranchCounts(leaves, f[:, 0])


def first_branch(graph: WellGraph, start_edge: int, H0: float, q0: float, epsilon: float, stream,
                 direction: int = -1, max_collisions: int | None = None) -> int:
    """Leaf index the particle first settles in when started on a merged well."""
    res = branch_runs(graph, start_edge, H0, q0, epsilon, 1, stream, direction, max_collisions, buffer_size=1024)
    leaf = int(res.leaves[0])
    if leaf == _jit.OUT_NO_DECISION:
        raise NoDecision("particle did not reach a leaf within the collision budget")
    if leaf == _jit.OUT_CAP:
        raise CapExceeded("energy exceeded the cap before reaching a leaf")
    return leaf


def hitting_runs(graph: WellGraph, H0: float, q0: float, level: float, T: float, epsilon: float, n_runs: int,
                 stream, samplers=None, tilt=None, direction: int = -1, workers: int = 1,
                 buffer_size: int = 1 << 14, check: bool = True):
    """Replicated runs stopped when the interpolated energy reaches ``level``.

    Returns
    -------
    hits : ndarray of int
        1 if ``level`` was reached by rescaled time T, 0 if not, -2 on cap abort.
    loglr : ndarray
        Log likelihood ratio of the original over the sampling law.
    """
    if check:
        check_epsilon(graph, epsilon)
    e0 = locate(graph, H0, q0)
    d0 = -1 if direction < 0 else 1

    def fn(s, n):
        return _drive_block(graph, s, _jit.MODE_HIT, epsilon, level, T / epsilon, 0, e0, H0, q0, d0, n,
                            samplers, tilt, buffer_size)

    hits, f = _run_blocks(n_runs, stream, workers, fn)
    return hits, f[:, 1]


def final_energy_runs(graph: WellGraph, H0: float, q0: float, T: float, epsilon: float, n_runs: int, stream,
                      samplers=None, tilt=None, direction: int = -1, workers: int = 1,
                      buffer_size: int = 1 << 14, check: bool = True):
    """Replicated runs returning the interpolated energy at rescaled time T.

    Returns
    -------
    H_T : ndarray
        Energy at T (nan for runs aborted at the cap).
    loglr : ndarray
        Log likelihood ratio of the original over the sampling law.
    """
    if check:
        check_epsilon(graph, epsilon)
    e0 = locate(graph, H0, q0)
    d0 = -1 if direction < 0 else 1

    def fn(s, n):
        return _drive_block(graph, s, _jit.MODE_FINAL, epsilon, 0.0, T / epsilon, 0, e0, H0, q0, d0, n,
                            samplers, tilt, buffer_size)

    flag, f = _run_blocks(n_runs, stream, workers, fn)
    H_T = np.where(flag == 1, f[:, 0], np.nan)
    return H_T, f[:, 1]
