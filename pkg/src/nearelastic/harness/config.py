"""Line-oriented configuration files.

::

    # two wells under one merged well
    [walls]
    0   inf
    1   1.0
    2   inf
    [floors]
    0.2 0.3
    [kicks]
    default = uniform(-0.5, 1.0)  uniform(0.1, 0.6)
    3       = uniform(-0.5, 1.0)  uniform(0.1, 0.6)
    [sim]
    epsilon = 1e-3
    horizon = 2.0
    H0 = 2.0
    [analysis]
    budget = 100000

``[walls]`` lists ``position height`` per wall, the two end walls at height
``inf`` (or with the height omitted). ``[floors]`` lists one floor per leaf.
``[kicks]`` gives xi and eta per well number, ``default`` covering the rest.
``[sim]`` and ``[analysis]`` hold ``key = value`` settings; values may be
numbers, comma separated number lists or words. An optional ``[vtable]``
section holds ``FROM TO VALUE`` quasi-potential lines and ``[branch]`` holds
``VERTEX = p_left`` lines.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

from ..errors import ConfigError, NearElasticError
from ..kernels import KickPair, parse_spec
from ..topology import WellGraph, WellSystem, build_graph

SECTIONS = ("walls", "floors", "kicks", "sim", "analysis", "vtable", "branch")

SIM_KEYS = {"epsilon": float, "horizon": float, "grid_dt": float, "replicas": int, "seed": int, "H0": float,
            "q0": float, "cap": float, "start_edge": int, "workers": int}
ANALYSIS_KEYS = {"budget": int, "grid_points": int, "epochs": int, "method": str, "dh": "list", "epsilons": "list",
                 "T": float, "tol": float, "edge": int, "vertex": str, "beta_min": float, "beta_max": float,
                 "beta_points": int, "h_points": int}

_SPEC_RE = re.compile(r"[A-Za-z_]+\s*\([^()]*\)")


@dataclass
class Config:
    system: WellSystem
    graph: WellGraph
    sim: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    vtable: dict | None = None
    branch: dict | None = None
    text: str = ""

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def _num(tok, ln, col):
    try:
        v = float(tok)
    except ValueError:
        raise ConfigError(f"expected a number, got {tok!r}", line=ln, column=col) from None
    if math.isnan(v):
        raise ConfigError("NaN is not allowed", line=ln, column=col)
    return v


def _tokens(line):
    """(token, 1-based column) pairs split on whitespace and commas."""
    return [(m.group(), m.start() + 1) for m in re.finditer(r"[^\s,]+", line)]


def _value(kind, raw, ln, col, key):
    if kind == "list":
        return [_num(t, ln, col + c - 1) for t, c in _tokens(raw)]
    if kind is str:
        return raw
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {raw!r}", line=ln, column=col) from None
    return _num(raw, ln, col)


def parse_config(text: str) -> Config:
    """Parse and validate a configuration; errors carry line and column."""
    section = None
    walls = []
    floors = []
    kicks = {}
    sim = {}
    analysis = {}
    vlines = []
    branch = {}
    seen = set()
    kick_line = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        indent = len(line) - len(line.lstrip())
        if stripped.startswith("["):
            m = re.fullmatch(r"\[\s*([A-Za-z]+)\s*\]", stripped)
            if not m:
                raise ConfigError(f"malformed section header {stripped!r}", line=ln, column=indent + 1)
            name = m.group(1).lower()
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]", line=ln, column=indent + 2)
            if name in seen:
                raise ConfigError(f"duplicate section [{name}]", line=ln, column=indent + 2)
            seen.add(name)
            section = name
            continue
        if section is None:
            raise ConfigError("content before the first section header", line=ln, column=indent + 1)
        if section == "walls":
            toks = _tokens(line)
            if len(toks) not in (1, 2):
                raise ConfigError("expected 'position [height]'", line=ln, column=indent + 1)
            pos = _num(toks[0][0], ln, toks[0][1])
            h = _num(toks[1][0], ln, toks[1][1]) if len(toks) == 2 else math.inf
            walls.append((pos, h, ln, toks[-1][1]))
        elif section == "floors":
            floors += [(_num(t, ln, c), ln, c) for t, c in _tokens(line)]
        elif section == "kicks":
            if "=" not in line:
                raise ConfigError("expected 'WELL = xi_spec eta_spec'", line=ln, column=indent + 1)
            key, rhs = line.split("=", 1)
            key = key.strip()
            rcol = line.index("=") + 2
            specs = list(_SPEC_RE.finditer(rhs))
            rest = _SPEC_RE.sub("", rhs).strip()
            if len(specs) != 2 or rest:
                raise ConfigError("expected two distribution specs such as uniform(0.1, 0.6)", line=ln,
                                  column=rcol)
            try:
                pair = tuple(parse_spec(m.group()) for m in specs)
            except NearElasticError as e:
                raise ConfigError(str(e), line=ln, column=rcol + specs[0].start()) from None
            if key.lower() in ("default", "*"):
                k = "default"
            else:
                try:
                    k = int(key)
                except ValueError:
                    raise ConfigError(f"well must be a number or 'default', got {key!r}", line=ln,
                                      column=indent + 1) from None
            if k in kicks:
                raise ConfigError(f"kicks for well {k} given twice", line=ln, column=indent + 1)
            kicks[k] = pair
            kick_line[k] = ln
        elif section in ("sim", "analysis"):
            if "=" not in line:
                raise ConfigError("expected 'key = value'", line=ln, column=indent + 1)
            key, val = (s.strip() for s in line.split("=", 1))
            keys = SIM_KEYS if section == "sim" else ANALYSIS_KEYS
            if key not in keys:
                raise ConfigError(f"unknown [{section}] key {key!r}", line=ln, column=indent + 1)
            col = line.index("=") + 2 + (len(line.split("=", 1)[1]) - len(line.split("=", 1)[1].lstrip()))
            target = sim if section == "sim" else analysis
            target[key] = _value(keys[key], val, ln, col, key)
        elif section == "vtable":
            toks = _tokens(line)
            if len(toks) != 3:
                raise ConfigError("expected 'FROM TO VALUE'", line=ln, column=indent + 1)
            v = _num(toks[2][0], ln, toks[2][1])
            if v < 0:
                raise ConfigError("V must be nonnegative", line=ln, column=toks[2][1])
            vlines.append((toks[0][0], toks[1][0], v))
        elif section == "branch":
            if "=" not in line:
                raise ConfigError("expected 'VERTEX = p_left'", line=ln, column=indent + 1)
            key, val = (s.strip() for s in line.split("=", 1))
            p = _num(val, ln, line.index("=") + 2)
            if not 0 <= p <= 1:
                raise ConfigError("branch probability must be in [0, 1]", line=ln, column=line.index("=") + 2)
            branch[key] = p
    for need in ("walls", "floors"):
        if need not in seen:
            raise ConfigError(f"missing section [{need}]")
    if len(walls) < 2:
        raise ConfigError("at least two walls are required")
    for end in (walls[0], walls[-1]):
        if not math.isinf(end[1]):
            raise ConfigError("end walls must have infinite height", line=end[2], column=end[3])
    for w in walls[1:-1]:
        if math.isinf(w[1]):
            raise ConfigError("interior walls need a finite height", line=w[2], column=w[3])
    positions = [w[0] for w in walls]
    heights = [w[1] for w in walls[1:-1]]
    fl = [f[0] for f in floors]
    top = max(heights + fl)
    cap = sim.get("cap", 4.0 * top)
    n_leaves = len(walls) - 1
    n_edges = 2 * n_leaves - 1
    pairs = None
    if kicks:
        bad = [k for k in kicks if k != "default" and not 1 <= k <= n_edges]
        if bad:
            raise ConfigError(f"well {bad[0]} does not exist (wells are 1..{n_edges})", line=kick_line[bad[0]],
                              column=1)
        missing = [k for k in range(1, n_edges + 1) if k not in kicks and "default" not in kicks]
        if missing:
            raise ConfigError(f"no kicks for wells {missing} and no default")
        pairs = []
        for k in range(1, n_edges + 1):
            xi, eta = kicks.get(k, kicks.get("default"))
            try:
                pairs.append(KickPair(xi, eta))
            except ConfigError as e:
                raise ConfigError(f"well {k}: {e}", line=kick_line.get(k, kick_line.get("default"))) from None
    system = WellSystem(tuple(positions), tuple(heights), tuple(fl), cap, tuple(pairs) if pairs else None)
    graph = build_graph(system)
    if branch:
        unknown = [k for k in branch if k not in graph.interior_names]
        if unknown:
            raise ConfigError(f"[branch] names non-interior vertices {unknown}")
    vtable = {(a, b): v for a, b, v in vlines} if vlines else None
    return Config(system, graph, sim, analysis, vtable, branch or None, text)


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
