"""Ladder variables of the alternating kick walk and branching probabilities.

The walk is S_0 = 0, S_{2m+1} = S_{2m} + xi_{m+1}, S_{2m+2} = S_{2m+1} + eta_{m+1}.
A particle started just above a merge vertex, moving toward the left wall,
falls into the left child exactly when the first index with S_m above the
level is odd. As the level grows, the probability of an odd index converges
to a ratio of ladder quantities of the paired walk T_n = S_{2n}: with
N = min{n : T_n > 0}, b = S_{2N-1} and c = T_N, the limit is
E[b; b > 0] / E[c] whenever eta > 0 a.s.

Four estimators are provided: direct parity simulation, Monte Carlo ladder
statistics, a lattice Wiener-Hopf computation, and, for kicks of both signs,
the two-state parity chain of strong ladder indices.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, GridTooCoarse, HypothesisError, NumericError
from .kernels import KickPair, split

BLOCK = 1 << 16
Z95 = 1.959963984540054


def wilson_interval(k: float, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


# ---------------------------------------------------------------------------
# direct parity


@dataclass(frozen=True)
class WalkSpec:
    """Alternating walk with kick pair ``pair`` and crossing level ``lam * n``."""

    pair: KickPair
    lam: float
    n: int

    def __post_init__(self):
        if not (self.lam > 0 and self.n >= 1):
            raise ValueError("WalkSpec needs lam > 0 and n >= 1")

    @property
    def level(self) -> float:
        return self.lam * self.n


@dataclass(frozen=True)
class ParityEstimate:
    p_odd: float
    p_even: float
    ci_low: float
    ci_high: float
    se: float
    n: int
    odd_count: int


def _parity_block(pair, level, n, stream, max_half_steps):
    S = np.zeros(n)
    idx = np.arange(n)
    odd = 0
    steps = 0
    while idx.size:
        for spec, is_odd in ((pair.xi, True), (pair.eta, False)):
            S[idx] += spec.sample(stream, idx.size)
            crossed = S[idx] > level
            if is_odd:
                odd += int(np.count_nonzero(crossed))
            idx = idx[~crossed]
            steps += 1
            if not idx.size:
                break
        if steps > max_half_steps:
            raise NumericError("parity walk did not cross the level; drift too small for the step budget")
    return odd


def walk_parity_mc(spec: WalkSpec, replicas: int, stream, max_half_steps: int = 10_000_000) -> ParityEstimate:
    """Frequency of an odd first-passage index over ``spec.level``."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    n_blocks = -(-replicas // BLOCK)
    odd = 0
    for b, s in enumerate(split(stream, n_blocks)):
        n = min(BLOCK, replicas - b * BLOCK)
        odd += _parity_block(spec.pair, spec.level, n, s, max_half_steps)
    p = odd / replicas
    lo, hi = wilson_interval(odd, replicas)
    return ParityEstimate(p, 1.0 - p, lo, hi, math.sqrt(max(p * (1 - p), 0.0) / replicas), replicas, odd)


# ---------------------------------------------------------------------------
# Monte Carlo ladder statistics


def require_positive_eta(pair: KickPair):
    lo, _ = pair.eta.support
    if lo < 0 or (lo == 0 and pair.eta.is_degenerate):
        raise HypothesisError(
            f"the ladder ratio needs eta > 0 a.s., but eta = {pair.eta} can be nonpositive; "
            "use general_parity for kicks of both signs"
        )


@dataclass(frozen=True)
class LadderStats:
    """Monte Carlo ladder quantities. Standard errors are per estimate."""

    p: float
    p_se: float
    p_ci: tuple
    Ec: float
    Ec_se: float
    Eb_plus: float
    Eb_plus_se: float
    Ea: float
    Ea_se: float
    EN: float
    epochs: int
    max_b_minus_c: float
    min_c: float


def _ladder_block(pair, n, stream):
    T = np.zeros(n)
    b = np.empty(n)
    c = np.empty(n)
    a = np.empty(n)
    N = np.zeros(n, dtype=np.int64)
    idx = np.arange(n)
    while idx.size:
        x = pair.xi.sample(stream, idx.size)
        y = pair.eta.sample(stream, idx.size)
        Tprev = T[idx]
        half = Tprev + x
        Tn = half + y
        N[idx] += 1
        done = Tn > 0
        di = idx[done]
        b[di] = half[done]
        c[di] = Tn[done]
        a[di] = Tprev[done]
        T[idx] = Tn
        idx = idx[~done]
    return a, b, c, N


def ladder_stats_mc(pair: KickPair, epochs: int, stream) -> LadderStats:
    """Sample ``epochs`` ladder epochs and form p = E[b; b > 0] / E[c]."""
    require_positive_eta(pair)
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    sums = np.zeros(8)  # x, y, xx, yy, xy, a, aa, N
    max_bc, min_c = -np.inf, np.inf
    n_blocks = -(-epochs // BLOCK)
    for k, s in enumerate(split(stream, n_blocks)):
        n = min(BLOCK, epochs - k * BLOCK)
        a, b, c, N = _ladder_block(pair, n, s)
        x = np.where(b > 0, b, 0.0)
        sums += [x.sum(), c.sum(), (x * x).sum(), (c * c).sum(), (x * c).sum(), a.sum(), (a * a).sum(), N.sum()]
        max_bc = max(max_bc, float(np.max(b - c)))
        min_c = min(min_c, float(np.min(c)))
    n = epochs
    mx, my = sums[0] / n, sums[1] / n
    vx = max(sums[2] / n - mx * mx, 0.0)
    vy = max(sums[3] / n - my * my, 0.0)
    cxy = sums[4] / n - mx * my
    p = mx / my
    p_var = max(vx - 2 * p * cxy + p * p * vy, 0.0) / (n * my * my)
    p_se = math.sqrt(p_var)
    ma = sums[5] / n
    va = max(sums[6] / n - ma * ma, 0.0)
    return LadderStats(
        p=p,
        p_se=p_se,
        p_ci=(p - Z95 * p_se, p + Z95 * p_se),
        Ec=my,
        Ec_se=math.sqrt(vy / n),
        Eb_plus=mx,
        Eb_plus_se=math.sqrt(vx / n),
        Ea=ma,
        Ea_se=math.sqrt(va / n),
        EN=sums[7] / n,
        epochs=n,
        max_b_minus_c=max_bc,
        min_c=min_c,
    )


# ---------------------------------------------------------------------------
# lattice computation


def lattice_masses(spec, h: float):
    """Masses of ``spec`` on the lattice h*Z, node k owning [(k-1/2)h, (k+1/2)h).

    Returns (first node, masses).
    """
    lo, hi = spec.support
    k0 = int(math.floor(lo / h + 0.5)) - 1
    k1 = int(math.ceil(hi / h - 0.5)) + 1
    k = np.arange(k0, k1 + 1)
    edges = (np.concatenate([k, [k1 + 1]]) - 0.5) * h
    F = spec.cdf(edges)
    m = np.diff(F)
    m = np.clip(m, 0.0, None)
    return k0, m / m.sum()


@dataclass
class LadderGrid:
    """Lattice ladder quantities.

    ``c_nodes``/``c_mass``: law of the ladder height c on nodes > 0 (node 0
    carries the half of the zero cell that stops). ``b_nodes``/``b_mass``:
    law of b = T_{N-1} + xi_N. ``half_nodes``/``half_mass``: occupation
    measure of T_{n-1} + xi_n over all pre-ladder steps (not weighted by the
    stopping event). ``w_nodes``/``w_mass``: pre-ladder occupation of T.
    """

    h: float
    n_max: int
    p: float
    Ec: float
    Eb_plus: float
    Ea: float
    EN: float
    Ezeta: float
    mass: float
    lost: float
    residual: float
    iterations: int
    c_nodes: np.ndarray = field(repr=False)
    c_mass: np.ndarray = field(repr=False)
    b_nodes: np.ndarray = field(repr=False)
    b_mass: np.ndarray = field(repr=False)
    half_nodes: np.ndarray = field(repr=False)
    half_mass: np.ndarray = field(repr=False)
    w_nodes: np.ndarray = field(repr=False)
    w_mass: np.ndarray = field(repr=False)
    eta_k0: int = 0
    eta_mass: np.ndarray = field(default=None, repr=False)

    def summary(self) -> dict:
        keys = ("h", "n_max", "p", "Ec", "Eb_plus", "Ea", "EN", "Ezeta", "mass", "lost", "residual", "iterations")
        return {k: getattr(self, k) for k in keys}


def _ladder_lattice(pair, h, K, tol=1e-10, max_iter=1_000_000):
    kx, px = lattice_masses(pair.xi, h)
    ke, pe = lattice_masses(pair.eta, h)
    pz = np.convolve(px, pe)
    kz = kx + ke
    # u over nodes -K..0 (index i <-> node i - K)
    u = np.zeros(K + 1)
    u[K] = 1.0
    w = np.zeros(K + 1)
    top = max(kz + len(pz) - 1, 1)
    E = np.zeros(top + 1)  # nodes 0..top
    lost = 0.0
    it = 0
    while True:
        w += u
        new = np.convolve(u, pz)
        nodes = np.arange(len(new)) + (kz - K)
        pos = nodes > 0
        E[nodes[pos]] += new[pos]
        lost += float(new[nodes < -K].sum())
        keep = (nodes <= 0) & (nodes >= -K)
        u = np.zeros(K + 1)
        u[nodes[keep] + K] = new[keep]
        E[0] += 0.5 * u[K]
        u[K] *= 0.5
        it += 1
        residual = float(u.sum())
        if residual < tol or it >= max_iter:
            break
    return dict(kx=kx, px=px, ke=ke, pe=pe, kz=kz, pz=pz, w=w, E=E, lost=lost, residual=residual, it=it)


def _survival_half(k0, p, nodes):
    """P(X > node*h) + P(X = node*h)/2 on the lattice, for each node."""
    tail = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])  # tail[j] = sum_{i>=j} p[i]
    j = np.asarray(nodes) - k0
    jj = np.clip(j, 0, len(p))
    above = np.where(j < 0, 1.0, tail[np.clip(j + 1, 0, len(p))])
    at = np.where((j >= 0) & (j < len(p)), p[np.clip(jj, 0, len(p) - 1)], 0.0)
    return above + 0.5 * at


def ladder_grid(pair: KickPair, grid_points: int = 4096, n_max: int | None = None,
                tol: float = 1e-10, lost_tol: float = 1e-12) -> LadderGrid:
    """Ladder height and pre-ladder laws on a uniform lattice.

    The lattice spans [-n_max * 2M, 2M] with ``grid_points`` nodes. ``n_max``
    starts small and doubles until the mass pushed off the left end is below
    ``lost_tol``.
    """
    require_positive_eta(pair)
    if not (pair.xi.has_density and pair.eta.has_density):
        raise HypothesisError("the lattice computation needs continuous kick densities")
    M = pair.bound
    nm = n_max or 1
    while True:
        h = (nm + 1) * 2 * M / (grid_points - 1)
        K = int(round(nm * 2 * M / h))
        r = _ladder_lattice(pair, h, K, tol)
        if r["lost"] <= lost_tol or n_max is not None or nm >= 1 << 12:
            break
        nm *= 2
    E = r["E"]
    c_nodes = np.arange(len(E))
    mass = float(E.sum())
    if abs(mass + r["lost"] + r["residual"] - 1.0) > 1e-6 or abs(mass - 1.0) > 1e-6:
        raise GridTooCoarse(f"ladder height mass {mass!r} differs from 1 by more than 1e-6 (lost {r['lost']!r})")
    w = r["w"]
    w_nodes = np.arange(-K, 1)
    half = np.convolve(w, r["px"])
    half_nodes = np.arange(len(half)) + (-K + r["kx"])
    b_mass = half * _survival_half(r["ke"], r["pe"], -half_nodes)
    Ec = float(np.sum(c_nodes * h * E))
    pos = half_nodes > 0
    Eb_plus = float(np.sum(half_nodes[pos] * h * b_mass[pos]))
    Ea = float(np.sum(w_nodes * h * w * _survival_half(r["kz"], r["pz"], -w_nodes)))
    zeta_nodes = np.arange(len(r["pz"])) + r["kz"]
    return LadderGrid(
        h=h,
        n_max=nm,
        p=Eb_plus / Ec,
        Ec=Ec,
        Eb_plus=Eb_plus,
        Ea=Ea,
        EN=float(w.sum()),
        Ezeta=float(np.sum(zeta_nodes * h * r["pz"])),
        mass=mass,
        lost=r["lost"],
        residual=r["residual"],
        iterations=r["it"],
        c_nodes=c_nodes * h,
        c_mass=E,
        b_nodes=half_nodes * h,
        b_mass=b_mass,
        half_nodes=half_nodes * h,
        half_mass=half,
        w_nodes=w_nodes * h,
        w_mass=w,
        eta_k0=r["ke"],
        eta_mass=r["pe"],
    )


def convolution_tv(grid: LadderGrid) -> float:
    """Total variation between the ladder height law and the half-step
    occupation convolved with the eta law, restricted to positive nodes."""
    conv = np.convolve(grid.half_mass, grid.eta_mass)
    first = int(round(grid.half_nodes[0] / grid.h)) + grid.eta_k0
    nodes = np.arange(len(conv)) + first
    pred = np.zeros_like(grid.c_mass)
    sel = (nodes > 0) & (nodes < len(grid.c_mass))
    pred[nodes[sel]] = conv[sel]
    return float(0.5 * np.sum(np.abs(pred[1:] - grid.c_mass[1:])))


# ---------------------------------------------------------------------------
# kicks of both signs


@dataclass(frozen=True)
class GeneralParityStats:
    """Parity chain of strong ladder indices and the derived branching value.

    ``mu_ij`` are frequencies of consecutive parity pairs (previous, current),
    ``mu_i`` their first-coordinate marginals. ``formula`` is
    (mu11 Eg1 + mu01 Eg0) / (mu1 Eg1 + mu0 Eg0) with Eg0, Eg1 the mean first
    ladder heights of the xi-first and eta-first walks. ``renewal`` is the
    height-weighted odd fraction E[gamma; odd] / E[gamma] along the long walk.
    """

    mu0: float
    mu1: float
    mu00: float
    mu01: float
    mu10: float
    mu11: float
    Eg0: float
    Eg1: float
    Eg0_se: float
    Eg1_se: float
    nu: dict
    nu_pairs: dict
    formula: float
    renewal: float
    epochs: int

    def to_dict(self) -> dict:
        return asdict(self)


def _long_walk_ladder(pair, epochs, stream, chunk=1 << 20):
    parities = []
    heights = []
    S0, runmax, base = 0.0, 0.0, 0
    count = 0
    while count < epochs:
        half = chunk // 2
        steps = np.empty(chunk)
        steps[0::2] = pair.xi.sample(stream, half)
        steps[1::2] = pair.eta.sample(stream, half)
        S = S0 + np.cumsum(steps)
        prevmax = np.maximum.accumulate(np.concatenate([[runmax], S[:-1]]))
        prevmax = np.maximum(prevmax, runmax)
        lad = np.nonzero(S > prevmax)[0]
        idx = base + lad + 1  # walk index of each ladder point
        parities.append((idx % 2).astype(np.int8))
        heights.append(S[lad] - prevmax[lad])
        count += lad.size
        S0 = S[-1]
        runmax = max(runmax, float(S.max()))
        base += chunk
    par = np.concatenate(parities)[:epochs]
    gam = np.concatenate(heights)[:epochs]
    return par, gam


def _first_ladder_heights(first, second, n, stream):
    out = np.empty(n)
    S = np.zeros(n)
    idx = np.arange(n)
    while idx.size:
        for spec in (first, second):
            S[idx] += spec.sample(stream, idx.size)
            up = S[idx] > 0
            out[idx[up]] = S[idx[up]]
            idx = idx[~up]
            if not idx.size:
                break
    return out


def general_parity(pair: KickPair, epochs: int, stream) -> GeneralParityStats:
    """Two-state parity chain estimate for kicks of either sign."""
    if not (pair.xi.prob_positive() > 0 and pair.eta.prob_positive() > 0):
        raise HypothesisError("both kicks need positive probability of being positive")
    if not pair.drift > 0:
        raise HypothesisError("mean kick sum must be positive")
    if epochs < 2:
        raise ValueError("epochs must be >= 2")
    s_walk, s_g0, s_g1 = split(stream, 3)
    par, gam = _long_walk_ladder(pair, epochs, s_walk)
    prev, cur = par[:-1], par[1:]
    n_pairs = len(cur)
    nu_pairs = {f"{i}{j}": int(np.count_nonzero((prev == i) & (cur == j))) for i in (0, 1) for j in (0, 1)}
    mu = {k: v / n_pairs for k, v in nu_pairs.items()}
    mu0 = mu["00"] + mu["01"]
    mu1 = mu["10"] + mu["11"]
    nu = {"0": int(np.count_nonzero(par == 0)), "1": int(np.count_nonzero(par == 1))}
    g0 = np.empty(0)
    g1 = np.empty(0)
    n_blocks = -(-epochs // BLOCK)
    parts0, parts1 = [], []
    for k, (a, b) in enumerate(zip(split(s_g0, n_blocks), split(s_g1, n_blocks))):
        n = min(BLOCK, epochs - k * BLOCK)
        parts0.append(_first_ladder_heights(pair.xi, pair.eta, n, a))
        parts1.append(_first_ladder_heights(pair.eta, pair.xi, n, b))
    g0, g1 = np.concatenate(parts0), np.concatenate(parts1)
    Eg0, Eg1 = float(g0.mean()), float(g1.mean())
    formula = (mu["11"] * Eg1 + mu["01"] * Eg0) / (mu1 * Eg1 + mu0 * Eg0)
    renewal = float(np.sum(gam * (par == 1)) / np.sum(gam))
    return GeneralParityStats(
        mu0=mu0, mu1=mu1, mu00=mu["00"], mu01=mu["01"], mu10=mu["10"], mu11=mu["11"],
        Eg0=Eg0, Eg1=Eg1, Eg0_se=float(g0.std() / math.sqrt(len(g0))), Eg1_se=float(g1.std() / math.sqrt(len(g1))),
        nu=nu, nu_pairs=nu_pairs, formula=float(formula), renewal=renewal, epochs=int(epochs),
    )


# ---------------------------------------------------------------------------
# dispatcher


@dataclass(frozen=True)
class BranchEstimate:
    vertex: str
    method: str
    p_left: float
    p_right: float
    se: float
    ci: tuple
    flags: dict
    details: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _vertex_edge(graph, vertex):
    if isinstance(vertex, str):
        e = graph.vertex_edge(vertex)
    else:
        e = int(vertex)
    if graph.edges[e].is_leaf:
        raise ValueError(f"{graph.edges[e].bottom_vertex} is not an interior vertex")
    return e


def mc_start(graph, e):
    """Start energy, position and epsilon for a simulated branching experiment."""
    edge = graph.edges[e]
    depth = min([edge.top - edge.bottom] + [graph.edges[c].top - graph.edges[c].bottom for c in edge.children])
    lam = 0.25 * depth
    M = edge.pair.bound
    eps = lam / (50.0 * max(M, 1.0))
    # keep every well's kicks below half the smallest gap
    eps = min(eps, 0.5 * graph.min_gap / graph.bound)
    return edge.bottom + lam, 0.5 * (edge.left + edge.right), eps


def branching_probabilities(graph, vertex, method: str, budget: int, stream, workers: int = 1) -> BranchEstimate:
    """Probability of descending into the left child at an interior vertex.

    ``method`` is ``mc`` (simulated particle), ``ladder`` (Monte Carlo ladder
    ratio) or ``grid`` (lattice ladder ratio). Ladder methods need eta > 0;
    otherwise the two-state parity chain is used instead, with a warning.
    """
    from .microsim import branch_runs

    e = _vertex_edge(graph, vertex)
    edge = graph.edges[e]
    name = edge.bottom_vertex
    pair = edge.pair
    flags = {"eta_positive": pair.eta.support[0] >= 0 and not pair.eta.is_degenerate,
             "xi_positive": pair.xi.support[0] >= 0 and not pair.xi.is_degenerate,
             "open_formula_regime": False}
    if method == "mc":
        H0, q0, eps = mc_start(graph, e)
        res = branch_runs(graph, e, H0, q0, eps, int(budget), stream, workers=workers)
        counts = res.counts(graph.n_leaves)
        left = set(graph.subtree_leaves(edge.children[0]))
        k = int(sum(counts[i] for i in left))
        n = int(counts.sum())
        p = k / n if n else float("nan")
        se = math.sqrt(p * (1 - p) / n) if n else float("nan")
        details = {"runs": int(budget), "decided": n, "undecided": res.n_undecided, "H0": H0, "epsilon": eps,
                   "level_over_eps": (H0 - edge.bottom) / eps}
        return BranchEstimate(name, method, p, 1 - p, se, wilson_interval(k, n), flags, details)
    if method not in ("ladder", "grid"):
        raise ConfigError(f"unknown method {method!r}; expected mc, ladder or grid")
    if not flags["eta_positive"]:
        warnings.warn(
            f"eta at {name} can be negative; using the two-state parity chain (no closed formula in this regime)",
            stacklevel=2,
        )
        flags["open_formula_regime"] = True
        g = general_parity(pair, int(budget) if method == "ladder" else 10**6, stream)
        return BranchEstimate(name, "general_parity", g.formula, 1 - g.formula, float("nan"), (float("nan"),) * 2,
                              flags, {"renewal": g.renewal, **{k: v for k, v in g.to_dict().items()
                                                               if k not in ("nu", "nu_pairs")}})
    if method == "ladder":
        st = ladder_stats_mc(pair, int(budget), stream)
        return BranchEstimate(name, method, st.p, 1 - st.p, st.p_se, st.p_ci, flags,
                              {"epochs": st.epochs, "Ec": st.Ec, "Eb_plus": st.Eb_plus, "EN": st.EN})
    gr = ladder_grid(pair, int(budget) if budget else 4096)
    return BranchEstimate(name, method, gr.p, 1 - gr.p, 0.0, (gr.p, gr.p), flags, gr.summary())
