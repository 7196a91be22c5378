"""Bounded kick distributions, random streams and cumulant generating functions.

Four families are supported: ``uniform``, ``truncnorm``, ``beta`` (scaled to an
interval) and ``twopoint``. The first three have continuous densities and can
be sampled; ``twopoint`` only feeds analytic routines with hand-checkable
roots and is refused by every sampler.

All randomness goes through :func:`make_stream`, a Philox counter generator
keyed by a seed and an integer path, so replicas and blocks can be split off
without coordination.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .errors import ConfigError, NumericError, SamplingUnsupported

FAMILIES = ("uniform", "truncnorm", "beta", "twopoint")

_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)


# ---------------------------------------------------------------------------
# streams


def make_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for ``seed`` and an integer key path.

    Distinct key paths give statistically independent streams; the same
    ``(seed, key)`` always reproduces the same sequence.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def split(stream: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split ``n`` child streams off ``stream`` (deterministic in call order)."""
    return stream.spawn(n)


# ---------------------------------------------------------------------------
# quadrature


def adaptive_gauss_legendre(f, a, b, rtol=1e-12, max_level=20):
    """Adaptive bisection with a 16-point Gauss-Legendre rule.

    Parameters
    ----------
    f : callable
        Vectorized integrand. Receives a 1-D array of nodes and returns an
        array whose last axis runs over the nodes; leading axes are separate
        components integrated together.
    a, b : float
        Finite interval.
    rtol : float
        Target error relative to the largest component of the integral.
    max_level : int
        Maximum bisection depth.

    Returns
    -------
    ndarray
        Integral of every component.

    Raises
    ------
    NumericError
        If the estimated error after ``max_level`` levels exceeds the target.
    """

    def rule(lo, hi):
        half = 0.5 * (hi - lo)
        x = lo + half * (_GL_X + 1.0)
        return half * np.asarray(f(x)) @ _GL_W

    whole = rule(a, b)
    scale = float(np.max(np.abs(whole)))
    total = np.zeros_like(whole, dtype=float)
    unresolved = 0.0
    stack = [(a, b, whole, 0)]
    width = b - a
    while stack:
        lo, hi, est, level = stack.pop()
        mid = 0.5 * (lo + hi)
        left, right = rule(lo, mid), rule(mid, hi)
        fine = left + right
        err = float(np.max(np.abs(fine - est)))
        scale = max(scale, float(np.max(np.abs(fine))))
        local_tol = rtol * scale * max((hi - lo) / width, 1e-3)
        if err <= local_tol or err == 0.0:
            total += fine
        elif level + 1 >= max_level:
            total += fine
            unresolved += err
        else:
            stack.append((mid, hi, right, level + 1))
            stack.append((lo, mid, left, level + 1))
    achieved = unresolved / scale if scale > 0 else 0.0
    if achieved > rtol * 10:
        raise NumericError(f"quadrature did not converge: achieved relative error {achieved:.3e}")
    return total


# ---------------------------------------------------------------------------
# distribution specs


def _uniform_log_mean_exp(kappa):
    # ln E exp(kappa U), U ~ U(0, 1)
    if abs(kappa) < 1.0:
        h = 0.5 * kappa
        if abs(h) < 1e-4:
            # series of ln(sinh h / h); also avoids h underflowing to 0
            h2 = h * h
            return h + h2 / 6.0 - h2 * h2 / 180.0
        return h + math.log(math.sinh(h) / h)
    if kappa > 0:
        return kappa + math.log(-math.expm1(-kappa)) - math.log(kappa)
    return math.log(-math.expm1(kappa)) - math.log(-kappa)


def _uniform_tilted(kappa):
    # mean and variance of U on [0, 1] with density proportional to exp(kappa u)
    if abs(kappa) < 0.05:
        k2 = kappa * kappa
        mean = 0.5 + kappa / 12.0 - kappa * k2 / 720.0 + kappa * k2 * k2 / 30240.0
        var = 1.0 / 12.0 - k2 / 240.0 + k2 * k2 / 6048.0
        return mean, var
    mean = 0.5 + 0.5 / math.tanh(0.5 * kappa) - 1.0 / kappa
    if abs(kappa) > 700:
        var = 1.0 / (kappa * kappa)
    else:
        var = 1.0 / (kappa * kappa) - 0.25 / math.sinh(0.5 * kappa) ** 2
    return mean, var


def _uniform_log_mean_exp_vec(kappa):
    k = np.asarray(kappa, dtype=float)
    out = np.empty_like(k)
    small = np.abs(k) < 1.0
    h = 0.5 * k[small]
    tiny = np.abs(h) < 1e-4
    hs = np.where(tiny, 1.0, h)
    h2 = h * h
    out[small] = np.where(tiny, h + h2 / 6.0 - h2 * h2 / 180.0, h + np.log(np.sinh(hs) / hs))
    pos = k >= 1.0
    out[pos] = k[pos] + np.log(-np.expm1(-k[pos])) - np.log(k[pos])
    neg = k <= -1.0
    out[neg] = np.log(-np.expm1(k[neg])) - np.log(-k[neg])
    return out


def _uniform_tilted_vec(kappa):
    k = np.asarray(kappa, dtype=float)
    mean = np.empty_like(k)
    var = np.empty_like(k)
    small = np.abs(k) < 0.05
    ks = k[small]
    k2 = ks * ks
    mean[small] = 0.5 + ks / 12.0 - ks * k2 / 720.0 + ks * k2 * k2 / 30240.0
    var[small] = 1.0 / 12.0 - k2 / 240.0 + k2 * k2 / 6048.0
    big = ~small
    kb = k[big]
    mean[big] = 0.5 + 0.5 / np.tanh(0.5 * kb) - 1.0 / kb
    # 1/(4 sinh^2(k/2)) = e^{-|k|} / (1 - e^{-|k|})^2, safe for large |k|
    ea = np.exp(-np.abs(kb))
    var[big] = 1.0 / (kb * kb) - ea / (-np.expm1(-np.abs(kb))) ** 2
    return mean, var


@dataclass(frozen=True)
class PerturbationSpec:
    """A bounded kick distribution.

    Parameters
    ----------
    family : str
        One of ``uniform``, ``truncnorm``, ``beta``, ``twopoint``.
    params : tuple of float
        ``uniform``: (a, b). ``truncnorm``: (mu, sigma, lo, hi).
        ``beta``: (alpha, beta, lo, hi). ``twopoint``: (x1, p1, x2).
    text : str, optional
        Source text, kept so configs can be written back verbatim.
    """

    family: str
    params: tuple
    text: str = field(default="", compare=False)

    def __post_init__(self):
        fam, p = self.family, tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        need = {"uniform": 2, "truncnorm": 4, "beta": 4, "twopoint": 3}
        if fam not in need:
            raise ConfigError(f"unknown distribution family {fam!r}")
        if len(p) != need[fam]:
            raise ConfigError(f"{fam} takes {need[fam]} parameters, got {len(p)}")
        if not all(math.isfinite(v) for v in p):
            raise ConfigError(f"{fam} parameters must be finite")
        if fam == "uniform" and not p[0] <= p[1]:
            raise ConfigError("uniform(a,b) needs a <= b")
        if fam == "truncnorm" and not (p[1] > 0 and p[2] < p[3]):
            raise ConfigError("truncnorm(mu,sigma,lo,hi) needs sigma > 0 and lo < hi")
        if fam == "beta" and not (p[0] >= 1 and p[1] >= 1 and p[2] < p[3]):
            raise ConfigError("beta(alpha,beta,lo,hi) needs alpha, beta >= 1 and lo < hi")
        if fam == "twopoint" and not (0 < p[1] < 1 and p[0] != p[2]):
            raise ConfigError("twopoint(x1,p1,x2) needs 0 < p1 < 1 and x1 != x2")
        if not self.text:
            object.__setattr__(self, "text", f"{fam}({','.join(repr(v) for v in p)})")

    def __str__(self):
        return self.text

    # -- support ----------------------------------------------------------

    @property
    def support(self) -> tuple[float, float]:
        p = self.params
        if self.family == "uniform":
            return p[0], p[1]
        if self.family == "twopoint":
            return min(p[0], p[2]), max(p[0], p[2])
        return p[2], p[3]

    @property
    def bound(self) -> float:
        """Smallest M with all mass in [-M, M]."""
        lo, hi = self.support
        return max(abs(lo), abs(hi))

    @property
    def has_density(self) -> bool:
        return self.family != "twopoint" and not self.is_degenerate

    @property
    def is_degenerate(self) -> bool:
        return self.family == "uniform" and self.params[0] == self.params[1]

    def prob_negative(self) -> float:
        """P(X < 0)."""
        return float(self.cdf(np.array([0.0]), strict=True)[0])

    def prob_positive(self) -> float:
        """P(X > 0)."""
        return 1.0 - float(self.cdf(np.array([0.0]))[0])

    # -- truncated normal constants ------------------------------------------

    @cached_property
    def _tn(self):
        mu, sigma, lo, hi = self.params
        A, B = (lo - mu) / sigma, (hi - mu) / sigma
        Z = special.ndtr(B) - special.ndtr(A)
        if A > 0:  # upper tail, use survival functions for accuracy
            Z = special.ndtr(-A) - special.ndtr(-B)
        return A, B, Z

    # -- density, cdf, quantile ------------------------------------------

    def pdf(self, x):
        """Density on the real line (zero outside the support)."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        out = np.zeros_like(x)
        p = self.params
        if self.family == "uniform":
            if self.is_degenerate:
                raise SamplingUnsupported("degenerate uniform has no density")
            out[inside] = 1.0 / (p[1] - p[0])
        elif self.family == "truncnorm":
            mu, sigma = p[0], p[1]
            _, _, Z = self._tn
            z = (x[inside] - mu) / sigma
            out[inside] = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * sigma * Z)
        elif self.family == "beta":
            a, b, lo, hi = p
            w = hi - lo
            u = np.clip((x[inside] - lo) / w, 0.0, 1.0)
            logpdf = special.xlog1py(b - 1, -u) + special.xlogy(a - 1, u) - special.betaln(a, b)
            out[inside] = np.exp(logpdf) / w
        else:
            raise SamplingUnsupported("twopoint has no density")
        return out

    def cdf(self, x, strict=False):
        """P(X <= x), or P(X < x) when ``strict``."""
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.family == "uniform":
            a, b = p
            if a == b:
                return (x > a).astype(float) if strict else (x >= a).astype(float)
            return np.clip((x - a) / (b - a), 0.0, 1.0)
        if self.family == "truncnorm":
            mu, sigma, lo, hi = p
            A, B, Z = self._tn
            z = (np.clip(x, lo, hi) - mu) / sigma
            if A > 0:
                return np.clip((special.ndtr(-A) - special.ndtr(-z)) / Z, 0.0, 1.0)
            return np.clip((special.ndtr(z) - special.ndtr(A)) / Z, 0.0, 1.0)
        if self.family == "beta":
            a, b, lo, hi = p
            return special.betainc(a, b, np.clip((x - lo) / (hi - lo), 0.0, 1.0))
        x1, p1, x2 = p
        if strict:
            return p1 * (x > x1) + (1 - p1) * (x > x2)
        return p1 * (x >= x1) + (1 - p1) * (x >= x2)

    def ppf(self, u):
        """Quantile function for continuous families."""
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.family == "uniform":
            return p[0] + (p[1] - p[0]) * u
        if self.family == "truncnorm":
            from scipy.stats import truncnorm

            mu, sigma, lo, hi = p
            A, B, _ = self._tn
            return np.clip(truncnorm.ppf(u, A, B, loc=mu, scale=sigma), lo, hi)
        if self.family == "beta":
            a, b, lo, hi = p
            return lo + (hi - lo) * special.betaincinv(a, b, u)
        raise SamplingUnsupported("twopoint kicks are for analytic checks only and cannot be sampled")

    # -- moments ----------------------------------------------------------

    @cached_property
    def mean(self) -> float:
        p = self.params
        if self.family == "uniform":
            return 0.5 * (p[0] + p[1])
        if self.family == "truncnorm":
            mu, sigma = p[0], p[1]
            A, B, Z = self._tn
            phiA, phiB = math.exp(-0.5 * A * A), math.exp(-0.5 * B * B)
            return mu + sigma * (phiA - phiB) / (math.sqrt(2 * math.pi) * Z)
        if self.family == "beta":
            a, b, lo, hi = p
            return lo + (hi - lo) * a / (a + b)
        x1, p1, x2 = p
        return p1 * x1 + (1 - p1) * x2

    @cached_property
    def var(self) -> float:
        p = self.params
        if self.family == "uniform":
            return (p[1] - p[0]) ** 2 / 12.0
        if self.family == "truncnorm":
            sigma = p[1]
            A, B, Z = self._tn
            c = 1.0 / (math.sqrt(2 * math.pi) * Z)
            phiA, phiB = c * math.exp(-0.5 * A * A), c * math.exp(-0.5 * B * B)
            return sigma**2 * (1 + A * phiA - B * phiB - (phiA - phiB) ** 2)
        if self.family == "beta":
            a, b, lo, hi = p
            return (hi - lo) ** 2 * a * b / ((a + b) ** 2 * (a + b + 1))
        x1, p1, x2 = p
        return p1 * (1 - p1) * (x1 - x2) ** 2

    # -- exponential moments ------------------------------------------------

    def _tilted_integrals(self, beta):
        # (Z, E[X-c], E[(X-c)^2]) under f(x) exp(-beta (x - ref)), c = midpoint
        lo, hi = self.support
        ref = lo if beta >= 0 else hi
        c = 0.5 * (lo + hi)

        def integrand(x):
            w = self.pdf(x) * np.exp(-beta * (x - ref))
            d = x - c
            return np.stack([w, w * d, w * d * d])

        Z, m1, m2 = adaptive_gauss_legendre(integrand, lo, hi)
        return ref, c, Z, m1, m2

    def log_mgf(self, beta: float) -> float:
        """ln E exp(-beta X)."""
        beta = float(beta)
        if beta == 0.0:
            return 0.0
        p = self.params
        if self.family == "uniform":
            a, b = p
            return -beta * a + _uniform_log_mean_exp(-beta * (b - a))
        if self.family == "twopoint":
            x1, p1, x2 = p
            t1, t2 = math.log(p1) - beta * x1, math.log1p(-p1) - beta * x2
            m = max(t1, t2)
            return m + math.log(math.exp(t1 - m) + math.exp(t2 - m))
        return float(self.log_mgf_vec(np.array([beta]))[0])

    def _log_mgf_adaptive(self, beta):
        ref, _, Z, _, _ = self._tilted_integrals(beta)
        return -beta * ref + math.log(Z)

    def tilted_moments(self, beta: float) -> tuple[float, float]:
        """Mean and variance of X under the density proportional to f(x) exp(-beta x)."""
        beta = float(beta)
        p = self.params
        if self.family == "uniform":
            a, b = p
            m, v = _uniform_tilted(-beta * (b - a))
            return a + (b - a) * m, (b - a) ** 2 * v
        if self.family == "twopoint":
            x1, p1, x2 = p
            t1, t2 = math.log(p1) - beta * x1, math.log1p(-p1) - beta * x2
            q1 = 1.0 / (1.0 + math.exp(t2 - t1))
            mean = q1 * x1 + (1 - q1) * x2
            return mean, q1 * (1 - q1) * (x1 - x2) ** 2
        if beta == 0.0:
            return self.mean, self.var
        m, v = self.tilted_moments_vec(np.array([beta]))
        return float(m[0]), float(v[0])

    def _tilted_moments_adaptive(self, beta):
        _, c, Z, m1, m2 = self._tilted_integrals(beta)
        mean_c = m1 / Z
        return c + mean_c, max(m2 / Z - mean_c * mean_c, 0.0)

    def log_mgf_vec(self, beta) -> np.ndarray:
        """Vectorized :meth:`log_mgf`."""
        beta = np.asarray(beta, dtype=float)
        p = self.params
        if self.family == "uniform":
            a, b = p
            return -beta * a + _uniform_log_mean_exp_vec(-beta * (b - a))
        if self.family == "twopoint":
            x1, p1, x2 = p
            return np.logaddexp(math.log(p1) - beta * x1, math.log1p(-p1) - beta * x2)
        out = np.empty(beta.shape)
        for n, sel in self._buckets(beta):
            bb = beta[sel]
            if n == 0:
                out[sel] = [self._log_mgf_adaptive(x) for x in bb]
                continue
            x, w = self._fixed_nodes(n)
            ref = np.where(bb >= 0, x[0], x[-1])
            e = -bb[:, None] * (x[None, :] - ref[:, None])
            out[sel] = -bb * ref + np.log(np.exp(e) @ w)
        return out

    def tilted_moments_vec(self, beta):
        """Vectorized :meth:`tilted_moments`."""
        beta = np.asarray(beta, dtype=float)
        p = self.params
        if self.family == "uniform":
            a, b = p
            m, v = _uniform_tilted_vec(-beta * (b - a))
            return a + (b - a) * m, (b - a) ** 2 * v
        if self.family == "twopoint":
            x1, p1, x2 = p
            q1 = special.expit((math.log(p1) - beta * x1) - (math.log1p(-p1) - beta * x2))
            return q1 * x1 + (1 - q1) * x2, q1 * (1 - q1) * (x1 - x2) ** 2
        m = np.empty(beta.shape)
        v = np.empty(beta.shape)
        for n, sel in self._buckets(beta):
            bb = beta[sel]
            if n == 0:
                mv = [self._tilted_moments_adaptive(x) for x in bb]
                m[sel] = [t[0] for t in mv]
                v[sel] = [t[1] for t in mv]
                continue
            x, w = self._fixed_nodes(n)
            c = 0.5 * (x[0] + x[-1])
            ref = np.where(bb >= 0, x[0], x[-1])
            q = np.exp(-bb[:, None] * (x[None, :] - ref[:, None])) * w[None, :]
            q /= q.sum(axis=1, keepdims=True)
            d = x - c
            mc = q @ d
            m[sel] = c + mc
            v[sel] = np.maximum(q @ (d * d) - mc * mc, 0.0)
        return m, v

    # Fixed product rules: node count grows with kappa = |beta| * width so the
    # exponential factor stays resolved; beyond the last bucket the adaptive
    # rule takes over.
    _BUCKETS = (160, 320, 640, 1280, 2560)

    def _buckets(self, beta):
        lo, hi = self.support
        kappa = np.abs(beta) * (hi - lo)
        done = np.zeros(beta.shape, dtype=bool)
        for n in self._BUCKETS:
            sel = ~done & (kappa <= 0.75 * n)
            if sel.any():
                yield n, sel
            done |= sel
        if (~done).any():
            yield 0, ~done

    def _fixed_nodes(self, n):
        cache = self.__dict__.setdefault("_node_cache", {})
        if n not in cache:
            lo, hi = self.support
            if self.family == "beta":
                a, b = self.params[:2]
                t, w = special.roots_jacobi(n, b - 1.0, a - 1.0)
            else:
                t, w = np.polynomial.legendre.leggauss(n)
                w = w * self.pdf(lo + (hi - lo) * 0.5 * (t + 1.0))
            x = lo + (hi - lo) * 0.5 * (t + 1.0)
            x = np.concatenate([[lo], x, [hi]])
            w = np.concatenate([[0.0], w / w.sum(), [0.0]])
            cache[n] = (x, w)
        return cache[n]

    def partial_log_mgf(self, beta: float, upper: float = 0.0) -> float:
        """ln E[exp(-beta X); X < upper]; -inf when P(X < upper) = 0."""
        beta = float(beta)
        lo, hi = self.support
        if self.family == "twopoint":
            x1, p1, x2 = self.params
            terms = [math.log(p) - beta * x for x, p in ((x1, p1), (x2, 1 - p1)) if x < upper]
            if not terms:
                return -math.inf
            m = max(terms)
            return m + math.log(sum(math.exp(t - m) for t in terms))
        if lo >= upper:
            return -math.inf
        if self.is_degenerate:
            return -beta * lo
        c = min(hi, upper)
        if self.family == "uniform":
            a, b = self.params
            frac = math.log((c - a) / (b - a))
            return frac - beta * a + _uniform_log_mean_exp(-beta * (c - a))
        ref = lo if beta >= 0 else c
        if self.family == "beta":
            # algebraic weight (x - lo)^(alpha - 1) handled by QUADPACK
            a_, b_ = self.params[:2]
            lognorm = special.betaln(a_, b_) + (a_ + b_ - 1) * math.log(hi - lo)

            def f(x):
                return (hi - x) ** (b_ - 1) * math.exp(-beta * (x - ref))

            Z, err = integrate.quad(f, lo, c, weight="alg", wvar=(a_ - 1, 0.0), epsabs=0, epsrel=1e-12)
            Z = Z * math.exp(-lognorm)
        else:
            Z, err = integrate.quad(lambda x: float(self.pdf(x)) * math.exp(-beta * (x - ref)), lo, c,
                                    epsabs=0, epsrel=1e-12)
        if not Z > 0 or err > 1e-9 * Z:
            raise NumericError(f"partial exponential moment did not converge (estimate {Z!r}, error {err!r})")
        return -beta * ref + math.log(Z)

    # -- sampling -----------------------------------------------------------

    def sample(self, stream: np.random.Generator, size=None):
        """Inverse-CDF draws; consumes exactly one uniform per value."""
        if self.family == "twopoint":
            raise SamplingUnsupported("twopoint kicks are for analytic checks only and cannot be sampled")
        u = stream.random(size)
        return self.ppf(u) if size is not None else float(self.ppf(u))


def uniform(a, b) -> PerturbationSpec:
    return PerturbationSpec("uniform", (a, b))


def truncnorm(mu, sigma, lo, hi) -> PerturbationSpec:
    return PerturbationSpec("truncnorm", (mu, sigma, lo, hi))


def scaled_beta(alpha, beta, lo, hi) -> PerturbationSpec:
    return PerturbationSpec("beta", (alpha, beta, lo, hi))


def twopoint(x1, p1, x2) -> PerturbationSpec:
    return PerturbationSpec("twopoint", (x1, p1, x2))


_SPEC_RE = re.compile(r"^\s*([A-Za-z_]+)\s*\(([^()]*)\)\s*$")


def parse_spec(text: str) -> PerturbationSpec:
    """Parse ``family(p1,p2,...)``; fractions such as ``1/4`` are accepted."""
    m = _SPEC_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse distribution {text!r}")
    fam = m.group(1).lower()
    fam = {"truncated_normal": "truncnorm", "two_point": "twopoint", "scaled_beta": "beta"}.get(fam, fam)
    vals = []
    for tok in m.group(2).split(","):
        tok = tok.strip()
        try:
            if "/" in tok:
                num, den = tok.split("/")
                vals.append(float(num) / float(den))
            else:
                vals.append(float(tok))
        except ValueError:
            raise ConfigError(f"bad number {tok!r} in {text!r}") from None
    return PerturbationSpec(fam, tuple(vals), text=text.strip())


def sample(spec: PerturbationSpec, stream: np.random.Generator) -> float:
    """One draw from ``spec``."""
    return spec.sample(stream)


def mean(spec: PerturbationSpec) -> float:
    return spec.mean


def variance(spec: PerturbationSpec) -> float:
    return spec.var


# ---------------------------------------------------------------------------
# kick pairs


@dataclass(frozen=True)
class KickPair:
    """Left-wall kick ``xi`` and right-wall kick ``eta`` of one well.

    The energy loses ``eps * xi`` at the left wall and ``eps * eta`` at the
    right wall, so ``E xi + E eta > 0`` is required for a net decay.
    """

    xi: PerturbationSpec
    eta: PerturbationSpec
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.check and not self.xi.mean + self.eta.mean > 0:
            raise ConfigError(
                f"kick pair ({self.xi}, {self.eta}) has E xi + E eta = "
                f"{self.xi.mean + self.eta.mean!r}; a positive mean loss is required"
            )

    @property
    def bound(self) -> float:
        return max(self.xi.bound, self.eta.bound)

    @property
    def drift(self) -> float:
        """m = E xi + E eta."""
        return self.xi.mean + self.eta.mean

    @property
    def zeta_range(self) -> tuple[float, float]:
        """Essential range of zeta = -(xi + eta)."""
        (a1, b1), (a2, b2) = self.xi.support, self.eta.support
        return -(b1 + b2), -(a1 + a2)

    @property
    def samplable(self) -> bool:
        return self.xi.family != "twopoint" and self.eta.family != "twopoint"

    def swapped(self) -> "KickPair":
        return KickPair(self.eta, self.xi, check=self.check)

    def scaled(self, s: float) -> "KickPair":
        """Both kicks multiplied by ``s > 0``."""
        return KickPair(_scale_spec(self.xi, s), _scale_spec(self.eta, s), check=self.check)


def _scale_spec(spec, s):
    p = spec.params
    if spec.family == "uniform":
        return uniform(s * p[0], s * p[1])
    if spec.family == "truncnorm":
        return truncnorm(s * p[0], s * p[1], s * p[2], s * p[3])
    if spec.family == "beta":
        return scaled_beta(p[0], p[1], s * p[2], s * p[3])
    return twopoint(s * p[0], p[1], s * p[2])


def cumulant(pair: KickPair, beta: float) -> float:
    """K0(beta) = ln E exp(-beta (xi + eta)), factorized over the independent kicks."""
    beta = float(beta)
    if not math.isfinite(beta):
        raise ValueError("beta must be finite")
    if beta == 0.0:
        return 0.0
    return pair.xi.log_mgf(beta) + pair.eta.log_mgf(beta)


def cumulant_derivatives(pair: KickPair, beta: float) -> tuple[float, float]:
    """(K0'(beta), K0''(beta)) from the exponentially tilted kick moments."""
    m1, v1 = pair.xi.tilted_moments(beta)
    m2, v2 = pair.eta.tilted_moments(beta)
    return -(m1 + m2), v1 + v2


def cumulant_vec(pair: KickPair, beta) -> np.ndarray:
    """Vectorized :func:`cumulant`."""
    return pair.xi.log_mgf_vec(beta) + pair.eta.log_mgf_vec(beta)


def cumulant_derivatives_vec(pair: KickPair, beta):
    """Vectorized :func:`cumulant_derivatives`."""
    m1, v1 = pair.xi.tilted_moments_vec(beta)
    m2, v2 = pair.eta.tilted_moments_vec(beta)
    return -(m1 + m2), v1 + v2


# ---------------------------------------------------------------------------
# density grids


@dataclass(frozen=True)
class DensityGrid:
    """Density samples on a uniform grid over [-M, M].

    ``raw`` holds the analytic density at the nodes. ``density`` is the same
    array rescaled so the trapezoid rule integrates it to one; the rescaling
    factor differs from one by the trapezoid error of the raw samples.
    """

    x: np.ndarray
    density: np.ndarray
    raw: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])


def density_grid(spec: PerturbationSpec, n_points: int) -> DensityGrid:
    """Sample the density of ``spec`` on ``n_points`` uniform nodes over [-M, M]."""
    if not spec.has_density:
        raise SamplingUnsupported(f"{spec} has no continuous density")
    if n_points < 64:
        raise ValueError("n_points must be at least 64")
    M = spec.bound
    x = np.linspace(-M, M, int(n_points))
    raw = spec.pdf(x)
    mass = np.trapezoid(raw, x)
    return DensityGrid(x=x, density=raw / mass, raw=raw)
