"""Large deviations of the energy on the merge tree.

On well i the energy Hamiltonian is H(h, beta) = sqrt(2h) / (2 D_i) K0(beta)
with K0 the cumulant generating function of -(xi + eta). Its Legendre
transform L(h, alpha) is the local cost of moving the energy at rate alpha;
integrating L along a path gives the action. Climbing from one vertex to the
next costs beta* times the energy difference, beta* > 0 being the root of K0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import csgraph_from_dense, shortest_path

from .errors import EnvelopeError, HypothesisError, NoUphillError, NumericError
from .kernels import KickPair, cumulant, cumulant_derivatives, cumulant_derivatives_vec, cumulant_vec, split
from .topology import GraphPath, WellGraph

_GL5_X, _GL5_W = np.polynomial.legendre.leggauss(5)


@dataclass(frozen=True)
class EdgeHamiltonian:
    """Hamiltonian data of one well.

    ``flavor`` is ``interior`` (the usual energy Hamiltonian) or ``floor``
    (kicks restricted to the event that both are negative, evaluated at the
    floor energy only).
    """

    edge: int
    D: float
    pair: KickPair
    flavor: str = "interior"
    floor: float | None = None

    def __post_init__(self):
        if self.flavor not in ("interior", "floor"):
            raise ValueError("flavor must be 'interior' or 'floor'")
        if self.flavor == "floor" and self.floor is None:
            raise ValueError("the floor flavor needs the floor energy")

    def scale(self, h):
        """sqrt(2h) / (2D)."""
        return np.sqrt(2.0 * np.asarray(h, dtype=float)) / (2.0 * self.D)

    @property
    def U(self) -> float:
        """M / D, the bound of |dH/dbeta| / sqrt(2h)."""
        return self.pair.bound / self.D


def edge_hamiltonian(graph: WellGraph, e: int, flavor: str = "interior") -> EdgeHamiltonian:
    edge = graph.edges[e]
    floor = edge.bottom if edge.is_leaf else None
    return EdgeHamiltonian(e, edge.width, edge.pair, flavor, floor)


def hamiltonian(eh: EdgeHamiltonian, h: float, beta: float) -> float:
    """H(h, beta). The floor flavor ignores ``h`` and uses the floor energy."""
    if eh.flavor == "floor":
        s = float(eh.scale(eh.floor))
        return s * (eh.pair.xi.partial_log_mgf(beta) + eh.pair.eta.partial_log_mgf(beta))
    if not h > 0:
        raise ValueError("h must be positive")
    return float(eh.scale(h)) * cumulant(eh.pair, beta)


def hamiltonian_dbeta(eh: EdgeHamiltonian, h: float, beta: float) -> float:
    """dH/dbeta for the interior flavor."""
    if not h > 0:
        raise ValueError("h must be positive")
    return float(eh.scale(h)) * cumulant_derivatives(eh.pair, beta)[0]


# ---------------------------------------------------------------------------
# Legendre transform


def _solve_slope(pair: KickPair, a, tol=1e-14, max_iter=200):
    """Solve K0'(beta) = a elementwise by bracketed Newton.

    ``a`` must lie strictly inside the range of -(xi + eta).
    """
    a = np.asarray(a, dtype=float)
    beta = np.zeros_like(a)
    g0, _ = cumulant_derivatives_vec(pair, beta)
    up = a > g0
    lo = np.where(up, 0.0, -1.0)
    hi = np.where(up, 1.0, 0.0)
    # expand brackets
    for _ in range(80):
        gl, _ = cumulant_derivatives_vec(pair, lo)
        gh, _ = cumulant_derivatives_vec(pair, hi)
        bad_hi = up & (gh < a)
        bad_lo = ~up & (gl > a)
        if not (bad_hi.any() or bad_lo.any()):
            break
        lo = np.where(bad_hi, hi, lo)
        hi = np.where(bad_hi, 2 * hi, hi)
        hi = np.where(bad_lo, lo, hi)
        lo = np.where(bad_lo, 2 * lo, lo)
    else:
        raise NumericError("could not bracket the adjoint variable; slope too close to the edge of its range")
    beta = np.where(a == g0, 0.0, 0.5 * (lo + hi))
    done = a == g0
    for _ in range(max_iter):
        g, d2 = cumulant_derivatives_vec(pair, beta)
        r = g - a
        lo = np.where(r < 0, beta, lo)
        hi = np.where(r > 0, beta, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            nb = beta - r / d2
        outside = ~((nb > lo) & (nb < hi)) | ~np.isfinite(nb)
        nb = np.where(outside, 0.5 * (lo + hi), nb)
        step = np.abs(nb - beta)
        nb = np.where(done | (r == 0), beta, nb)
        conv = step <= tol * (1.0 + np.abs(beta))
        beta = nb
        done = done | conv | (r == 0)
        if done.all():
            return beta
    raise NumericError(f"Legendre Newton iteration did not converge (max residual {np.max(np.abs(r))!r})")


def legendre_vec(eh: EdgeHamiltonian, h, alpha):
    """Vectorized L(h, alpha) and adjoint beta; +inf / nan outside the finite range."""
    h = np.asarray(h, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    h, alpha = np.broadcast_arrays(h, alpha)
    if np.any(h <= 0):
        raise ValueError("h must be positive")
    s = eh.scale(h)
    a = alpha / s
    zlo, zhi = eh.pair.zeta_range
    inside = (a > zlo) & (a < zhi)
    L = np.full(a.shape, np.inf)
    beta = np.full(a.shape, np.nan)
    if inside.any():
        b = _solve_slope(eh.pair, a[inside])
        beta[inside] = b
        L[inside] = alpha[inside] * b - s[inside] * cumulant_vec(eh.pair, b)
    return L, beta


def legendre(eh: EdgeHamiltonian, h: float, alpha: float) -> tuple[float, float]:
    """L(h, alpha) = sup_beta (alpha beta - H(h, beta)) and the maximizing beta.

    Returns (+inf, nan) when alpha / (sqrt(2h)/(2D)) is outside the open range
    of -(xi + eta).
    """
    L, b = legendre_vec(eh, np.array([h]), np.array([alpha]))
    return float(L[0]), float(b[0])


def averaged_rate(eh: EdgeHamiltonian, h: float) -> float:
    """Energy rate of the averaged motion, dH/dbeta at beta = 0."""
    return -float(eh.scale(h)) * eh.pair.drift


# ---------------------------------------------------------------------------
# action


def _segment_action(eh, t0, t1, H0, H1, shape, tol=1e-9, max_level=14):
    if t1 <= t0:
        return 0.0 if H0 == H1 else math.inf
    r0, r1 = math.sqrt(H0), math.sqrt(H1)

    def integral(n):
        edges = np.linspace(0.0, 1.0, n + 1)
        u = (edges[:-1, None] + 0.5 * (_GL5_X[None, :] + 1.0) * (edges[1:, None] - edges[:-1, None])).ravel()
        w = np.tile(_GL5_W * 0.5 / n, n)
        if shape == "sqrt":
            r = r0 + (r1 - r0) * u
            phi = r * r
            dphi = 2 * r * (r1 - r0) / (t1 - t0)
        else:
            phi = H0 + (H1 - H0) * u
            dphi = np.full_like(u, (H1 - H0) / (t1 - t0))
        L, _ = legendre_vec(eh, phi, dphi)
        if not np.all(np.isfinite(L)):
            return math.inf
        return float(np.sum(w * L)) * (t1 - t0)

    n = 1
    prev = integral(n)
    if not math.isfinite(prev):
        return math.inf
    for _ in range(max_level):
        n *= 2
        cur = integral(n)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    return prev


def action(graph: WellGraph, path: GraphPath) -> float:
    """Integral of L along ``path``; +inf if any slope is out of range."""
    total = 0.0
    cache = {}
    for t0, t1, H0, H1, e, shape in path.segments():
        eh = cache.get(e)
        if eh is None:
            eh = cache[e] = edge_hamiltonian(graph, e)
        v = _segment_action(eh, t0, t1, H0, H1, shape)
        if not math.isfinite(v):
            return math.inf
        total += v
    return total


# ---------------------------------------------------------------------------
# quasi-potential


def uphill_root(eh) -> float:
    """The positive root beta* of K0.

    Accepts an :class:`EdgeHamiltonian` or a :class:`KickPair`.
    """
    pair = eh.pair if isinstance(eh, EdgeHamiltonian) else eh
    zlo, zhi = pair.zeta_range
    if zhi <= 0:
        raise NoUphillError("xi + eta >= 0 almost surely; the energy cannot climb")
    if not pair.drift > 0:
        raise HypothesisError("the mean kick sum must be positive")
    # bracket from the right, K0 convex with K0(0) = 0 and K0'(0) < 0
    hi = 1.0
    while cumulant(pair, hi) <= 0:
        hi *= 2.0
        if hi > 1e12:
            raise NumericError("could not bracket the root of K0")
    lo = hi / 2.0 if hi > 1.0 else 0.0
    beta = hi
    for _ in range(200):
        k = cumulant(pair, beta)
        d, _ = cumulant_derivatives(pair, beta)
        if k > 0:
            hi = beta
        else:
            lo = beta
        nb = beta - k / d if d > 0 else 0.5 * (lo + hi)
        if not lo < nb < hi:
            nb = 0.5 * (lo + hi)
        if abs(nb - beta) <= 1e-15 * max(1.0, beta) or hi - lo <= 1e-15 * max(1.0, beta):
            return float(nb)
        beta = nb
    raise NumericError("root of K0 did not converge")


@dataclass
class RateTable:
    """Quasi-potential between adjacent vertices.

    ``entries[(a, b)]`` is V(a, b) for adjacent vertex names; ``provenance``
    records ``computed`` or ``supplied`` per entry.
    """

    entries: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.entries[key]

    def get(self, a, b, default=math.inf):
        return self.entries.get((a, b), default)

    def set(self, a, b, value, provenance="computed"):
        if not value >= 0:
            raise ValueError(f"V({a},{b}) must be nonnegative, got {value!r}")
        self.entries[(a, b)] = float(value)
        self.provenance[(a, b)] = provenance

    def check(self, graph: WellGraph):
        """Every adjacent pair present, downhill entries zero, all entries >= 0."""
        problems = []
        for lo, hi in graph.adjacent_pairs():
            for key in ((lo, hi), (hi, lo)):
                if key not in self.entries:
                    problems.append(f"missing V{key}")
            if self.entries.get((hi, lo), 0.0) != 0.0:
                problems.append(f"downhill V({hi},{lo}) is not zero")
        problems += [f"negative V{k}" for k, v in self.entries.items() if v < 0]
        return problems

    def rows(self):
        return [(a, b, v, self.provenance.get((a, b), "")) for (a, b), v in sorted(self.entries.items())]


def adjacent_quasipotential(graph: WellGraph, eh: EdgeHamiltonian | None, E1: str, E2: str) -> float:
    """V(E1, E2) for adjacent vertices: beta* times the climb, zero downhill.

    ``eh`` may be None, in which case the connecting well's Hamiltonian is used.
    """
    e = graph.connecting_edge(E1, E2)
    h1, h2 = graph.vertex(E1).energy, graph.vertex(E2).energy
    if h2 <= h1:
        return 0.0
    if eh is None:
        eh = edge_hamiltonian(graph, e)
    try:
        return uphill_root(eh) * (h2 - h1)
    except NoUphillError:
        return math.inf


def compute_rate_table(graph: WellGraph) -> RateTable:
    table = RateTable()
    for lo, hi in graph.adjacent_pairs():
        table.set(lo, hi, adjacent_quasipotential(graph, None, lo, hi))
        table.set(hi, lo, 0.0)
    return table


def vertex_names(graph: WellGraph) -> list[str]:
    return [e.bottom_vertex for e in graph.edges]


def pairwise_quasipotential(graph: WellGraph, rate_table: RateTable):
    """Shortest-path sums of adjacent V over the tree.

    Returns (vertex names, matrix) with matrix[i, j] = V(name_i, name_j).
    """
    names = vertex_names(graph)
    idx = {n: i for i, n in enumerate(names)}
    n = len(names)
    W = np.full((n, n), np.inf)
    for (a, b), v in rate_table.entries.items():
        W[idx[a], idx[b]] = v
    # zero-cost arcs must survive the dense-to-sparse conversion
    G = csgraph_from_dense(W, null_value=np.inf)
    D = shortest_path(G, method="D", directed=True)
    np.fill_diagonal(D, 0.0)
    return names, D


# ---------------------------------------------------------------------------
# numerical path minimization


@dataclass(frozen=True)
class PathMinimum:
    value: float
    durations: np.ndarray
    energies: np.ndarray
    T: float
    converged: bool
    evaluations: int


def _golden_vec(f, a, b, tol=1e-10, max_iter=200):
    """Golden-section search run independently on each component of a, b."""
    g = (math.sqrt(5) - 1) / 2
    a = a.copy()
    b = b.copy()
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    for _ in range(max_iter):
        if np.all(np.abs(b - a) <= tol * (1 + np.abs(a) + np.abs(b))):
            break
        left = fc < fd
        # left: (a, b) -> (a, d), else (c, b)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        nc = np.where(left, b - g * (b - a), d)
        nd = np.where(left, c, a + g * (b - a))
        fnew = f(np.where(left, nc, nd))
        fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
        c, d = nc, nd
        n += 1
    x = 0.5 * (a + b)
    ok = bool(np.all(np.abs(b - a) <= tol * (1 + np.abs(a) + np.abs(b))))
    return x, np.minimum(f(x), np.minimum(fc, fd)), n + 1, ok


def minimize_path(eh: EdgeHamiltonian, H_a: float, H_b: float, segments: int = 64, T_grid=None,
                  subdiv: int = 4) -> PathMinimum:
    """Smallest action of an increasing piecewise linear path from H_a to H_b.

    Breakpoint energies are fixed uniformly in sqrt(h); the segment durations
    (hence the breakpoint times and the total time T) are free. With T free
    the action separates over segments, so each duration is optimized on its
    own: a log-spaced scan over ``T_grid / segments`` brackets the minimum of
    the segment cost, which is convex in the duration, and golden-section
    search refines it. All segments are handled together as arrays.
    """
    if not H_b > H_a:
        raise ValueError("minimize_path needs H_b > H_a")
    if segments < 1:
        raise ValueError("segments must be >= 1")
    if T_grid is None:
        T_grid = np.geomspace(1e-3, 1e4, 36)
    T_grid = np.asarray(T_grid, dtype=float)
    r = np.linspace(math.sqrt(H_a), math.sqrt(H_b), segments + 1)
    hk = r * r
    nodes = 0.5 * (_GL5_X + 1.0)
    sub = (np.arange(subdiv)[:, None] + nodes[None, :]).ravel() / subdiv
    wts = np.tile(_GL5_W * 0.5 / subdiv, subdiv)
    dh = np.diff(hk)
    phi = hk[:-1, None] + dh[:, None] * sub[None, :]
    evals = 0

    def cost(logtau):
        nonlocal evals
        evals += 1
        tau = np.exp(logtau)
        L, _ = legendre_vec(eh, phi, (dh / tau)[:, None] * np.ones_like(sub))
        with np.errstate(invalid="ignore"):
            return tau * (L @ wts)

    grid = np.log(T_grid / segments)
    vals = np.stack([cost(np.full(segments, g)) for g in grid], axis=1)
    j = np.argmin(vals, axis=1)
    if not np.all(np.isfinite(vals[np.arange(segments), j])):
        raise NumericError("no finite-cost duration on the scan grid")
    a = grid[np.maximum(j - 1, 0)]
    b = grid[np.minimum(j + 1, len(grid) - 1)]
    edge_hit = bool(np.any((j == 0) | (j == len(grid) - 1)))
    x, v, _, ok = _golden_vec(cost, a, b)
    durations = np.exp(x)
    return PathMinimum(float(np.sum(v)), durations, hk, float(durations.sum()), ok and not edge_hit, evals)


# ---------------------------------------------------------------------------
# exponential tilting


class TiltedSampler:
    """Kicks under the exponentially tilted law.

    Each kick is tilted separately, density proportional to f(x) exp(-beta x),
    so zeta = -(xi + eta) gets density proportional to its original density
    times exp(beta zeta). Draws use rejection from the original law with the
    exact envelope exp(-beta (x - x_ref)), x_ref the support end maximizing it.
    """

    def __init__(self, pair: KickPair, beta: float, min_efficiency: float = 1e-4):
        if not pair.samplable:
            raise HypothesisError("tilted sampling needs continuous kick densities")
        self.pair = pair
        self.beta = float(beta)
        self.log_m_xi = pair.xi.log_mgf(beta)
        self.log_m_eta = pair.eta.log_mgf(beta)
        self.K0 = self.log_m_xi + self.log_m_eta
        self.efficiency = {}
        for name, spec, lm in (("xi", pair.xi, self.log_m_xi), ("eta", pair.eta, self.log_m_eta)):
            lo, hi = spec.support
            ref = lo if beta >= 0 else hi
            eff = math.exp(lm + beta * ref) if not spec.is_degenerate else 1.0
            if eff < min_efficiency:
                raise EnvelopeError(f"rejection efficiency {eff:.2e} for {name} is below {min_efficiency:.0e}")
            self.efficiency[name] = eff

    @property
    def mean_zeta(self) -> float:
        return cumulant_derivatives(self.pair, self.beta)[0]

    def _draw(self, spec, eff, stream, n):
        if self.beta == 0.0 or spec.is_degenerate:
            return spec.sample(stream, n)
        lo, hi = spec.support
        ref = lo if self.beta >= 0 else hi
        out = np.empty(n)
        got = 0
        while got < n:
            m = int((n - got) / eff * 1.1) + 16
            x = spec.sample(stream, m)
            u = stream.random(m)
            acc = x[u < np.exp(-self.beta * (x - ref))]
            take = min(len(acc), n - got)
            out[got:got + take] = acc[:take]
            got += take
        return out

    def sample_xi(self, stream, n):
        return self._draw(self.pair.xi, self.efficiency["xi"], stream, n)

    def sample_eta(self, stream, n):
        return self._draw(self.pair.eta, self.efficiency["eta"], stream, n)

    def sample_zeta(self, stream, n):
        return -(self.sample_xi(stream, n) + self.sample_eta(stream, n))

    def log_lr_zeta(self, z):
        """log dP/dP_tilted at zeta values."""
        return -self.beta * np.asarray(z) + self.K0

    def tilt_tables(self, graph: WellGraph, e: int):
        """Samplers and log-likelihood tables for the simulator, tilting well ``e`` only."""
        n = graph.n_edges
        tb = np.zeros((n, 2))
        tm = np.zeros((n, 2))
        tb[e, :] = self.beta
        tm[e, 0] = self.log_m_xi
        tm[e, 1] = self.log_m_eta
        samplers = {(e, 0): self.sample_xi, (e, 1): self.sample_eta}
        return samplers, (tb, tm)


def tilted_sampler(pair: KickPair, beta: float) -> TiltedSampler:
    return TiltedSampler(pair, beta)


# ---------------------------------------------------------------------------
# rare events


@dataclass(frozen=True)
class RareEventEstimate:
    """Probability estimate with a 95% interval and -eps ln P.

    When no replica hit, ``estimate`` is 0, ``upper_only`` is True and
    ``neg_eps_log`` is computed from the upper confidence bound.
    """

    estimate: float
    se: float
    ci_low: float
    ci_high: float
    neg_eps_log: float
    hits: int
    n: int
    method: str
    epsilon: float
    dh: float
    upper_only: bool = False


def rare_event_probability(graph: WellGraph, edge: int, H0: float, dh: float, T: float, epsilon: float,
                           method: str, budget: int, stream, q0: float | None = None,
                           workers: int = 1) -> RareEventEstimate:
    """P(sup over t <= T of the interpolated energy >= H0 + dh)."""
    from .ladder import Z95, wilson_interval
    from .microsim import hitting_runs

    if dh < 0:
        raise ValueError("dh must be nonnegative")
    if dh == 0:
        return RareEventEstimate(1.0, 0.0, 1.0, 1.0, 0.0, int(budget), int(budget), method, epsilon, dh)
    e = graph.edges[edge]
    if q0 is None:
        q0 = 0.5 * (e.left + e.right)
    level = H0 + dh
    if method == "naive":
        hits, _ = hitting_runs(graph, H0, q0, level, T, epsilon, budget, stream, workers=workers)
        k = int(np.sum(hits == 1))
        p = k / budget
        lo, hi = wilson_interval(k, budget)
        se = math.sqrt(p * (1 - p) / budget)
        if k == 0:
            return RareEventEstimate(0.0, 0.0, 0.0, hi, -epsilon * math.log(hi), 0, budget, method, epsilon, dh,
                                     True)
        return RareEventEstimate(p, se, lo, hi, -epsilon * math.log(p), k, budget, method, epsilon, dh)
    if method != "tilted":
        raise ValueError("method must be 'naive' or 'tilted'")
    beta = uphill_root(e.pair)
    ts = TiltedSampler(e.pair, beta)
    samplers, tilt = ts.tilt_tables(graph, edge)
    hits, loglr = hitting_runs(graph, H0, q0, level, T, epsilon, budget, stream, samplers=samplers, tilt=tilt,
                               workers=workers)
    w = np.where(hits == 1, np.exp(loglr), 0.0)
    k = int(np.sum(hits == 1))
    p = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(budget)) if budget > 1 else 0.0
    if k == 0:
        return RareEventEstimate(0.0, 0.0, 0.0, 3.0 / budget, math.inf, 0, budget, method, epsilon, dh, True)
    return RareEventEstimate(p, se, max(p - Z95 * se, 0.0), p + Z95 * se, -epsilon * math.log(p), k, budget,
                             method, epsilon, dh)


def ldp_slope(graph: WellGraph, edge: int, H0: float, dhs, T: float, epsilon: float, budget: int, stream,
              method: str = "tilted", workers: int = 1):
    """Least-squares slope of -eps ln P against dh.

    Returns (slope, intercept, list of estimates).
    """
    streams = split(stream, len(dhs))
    ests = [rare_event_probability(graph, edge, H0, dh, T, epsilon, method, budget, s, workers=workers)
            for dh, s in zip(dhs, streams)]
    y = np.array([r.neg_eps_log for r in ests])
    slope, intercept = np.polyfit(np.asarray(dhs, float), y, 1)
    return float(slope), float(intercept), ests


def increment_log_probability(graph: WellGraph, edge: int, h0: float, h1: float, delta: float, window: float,
                              epsilon: float, budget: int, stream, q0: float | None = None):
    """-eps ln P(|H_delta - h1| < window) started from h0, by tilted sampling.

    The kicks are tilted with the adjoint beta of the straight path from h0
    to h1, which makes the target window typical. Returns (value, estimate,
    standard error of the estimate).
    """
    from .microsim import final_energy_runs

    e = graph.edges[edge]
    if q0 is None:
        q0 = 0.5 * (e.left + e.right)
    eh = edge_hamiltonian(graph, edge)
    L, beta = legendre(eh, 0.5 * (h0 + h1), (h1 - h0) / delta)
    if not math.isfinite(L):
        raise ValueError("h1 cannot be reached from h0 within delta")
    ts = TiltedSampler(e.pair, beta)
    samplers, tilt = ts.tilt_tables(graph, edge)
    H_T, loglr = final_energy_runs(graph, h0, q0, delta, epsilon, budget, stream, samplers=samplers, tilt=tilt)
    w = np.where(np.abs(H_T - h1) < window, np.exp(loglr), 0.0)
    p = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(budget))
    return (-epsilon * math.log(p) if p > 0 else math.inf), p, se


def increment_band(eh: EdgeHamiltonian, h0: float, h1: float, delta: float, window: float, n: int = 21):
    """Range of delta * L(h, alpha) over the box the increment event allows.

    h runs over the energies the straight path visits (widened by ``window``)
    and alpha over the slopes that land within ``window`` of h1.
    """
    hs = np.linspace(min(h0, h1) - window, max(h0, h1) + window, n)
    al = np.linspace(h1 - window - h0, h1 + window - h0, n) / delta
    Hg, Ag = np.meshgrid(hs, al)
    L, _ = legendre_vec(eh, Hg, Ag)
    v = delta * L
    return float(np.min(v)), float(np.max(v))


# ---------------------------------------------------------------------------
# structural checks


def hamiltonian_properties(eh: EdgeHamiltonian, h_grid=None, beta_grid=None, fd_step: float = 1e-5) -> dict:
    """Check the structural properties of H and L on grids.

    Returns a dict of named results, each ``{"ok": bool, ...}``.
    """
    if h_grid is None:
        h_grid = np.linspace(0.2, 4.0, 7)
    if beta_grid is None:
        beta_grid = np.linspace(-5.0, 5.0, 100)
    pair = eh.pair
    out = {}
    out["H_zero_at_beta0"] = {"ok": all(hamiltonian(eh, h, 0.0) == 0.0 for h in h_grid)}
    d0 = [hamiltonian_dbeta(eh, h, 0.0) for h in h_grid]
    out["dH_negative_at_beta0"] = {"ok": all(d < 0 for d in d0), "values": d0}
    worst = 0.0
    for h in h_grid:
        for b in beta_grid:
            fd = (hamiltonian(eh, h, b + fd_step) - hamiltonian(eh, h, b - fd_step)) / (2 * fd_step)
            an = hamiltonian_dbeta(eh, h, b)
            worst = max(worst, abs(fd - an) / max(abs(an), 1.0))
    out["dH_finite_difference"] = {"ok": worst <= 1e-6, "max_rel_err": worst}
    k2 = cumulant_derivatives_vec(pair, np.asarray(beta_grid))[1]
    out["K0_strictly_convex"] = {"ok": bool(np.all(k2 > 0)), "min_K0pp": float(np.min(k2))}
    bound_ok = True
    for h in h_grid:
        dH = np.abs(float(eh.scale(h)) * cumulant_derivatives_vec(pair, np.asarray(beta_grid))[0])
        bound_ok &= bool(np.all(dH <= eh.U * math.sqrt(2 * h) + 1e-12))
    out["dH_bounded"] = {"ok": bound_ok}
    drift_L = [legendre(eh, h, averaged_rate(eh, h))[0] for h in h_grid]
    out["L_zero_at_drift"] = {"ok": max(abs(v) for v in drift_L) <= 1e-10, "max": max(abs(v) for v in drift_L)}
    inf_ok = True
    for h in h_grid:
        lim = eh.U * math.sqrt(2 * h)
        for a in (1.0001 * lim, -1.0001 * lim, 2 * lim, -2 * lim):
            inf_ok &= math.isinf(legendre(eh, h, a)[0])
    out["L_infinite_outside"] = {"ok": inf_ok}
    interior_ok = True
    for h in h_grid:
        s = float(eh.scale(h))
        zlo, zhi = pair.zeta_range
        a0 = averaged_rate(eh, h)
        interior_ok &= s * zlo < a0 < s * zhi
    out["L_zero_interior"] = {"ok": interior_ok}
    cont = 0.0
    for h in h_grid[:3]:
        a = averaged_rate(eh, h) * 0.5
        base, _ = legendre(eh, h, a)
        for d in (1e-4, 1e-6):
            for dh_, da in ((d, 0), (0, d), (d, -d)):
                v, _ = legendre(eh, h + dh_, a + da)
                cont = max(cont, abs(v - base) / d)
    out["L_continuous"] = {"ok": bool(np.isfinite(cont) and cont < 1e3), "max_difference_quotient": cont}
    fen = 0.0
    eq = 0.0
    for h in h_grid[:3]:
        for b in np.linspace(-2, 2, 9):
            alpha = hamiltonian_dbeta(eh, h, b)
            L, bb = legendre(eh, h, alpha)
            fen = max(fen, alpha * b - L - hamiltonian(eh, h, b))
            eq = max(eq, abs(bb - b))
    out["fenchel"] = {"ok": fen <= 1e-8 and eq <= 1e-8, "max_gap": fen, "max_adjoint_err": eq}
    for v in out.values():
        v["ok"] = bool(v["ok"])
    return out
