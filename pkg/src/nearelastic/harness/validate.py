"""Invariant suite run by the ``validate`` subcommand."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .. import meta, rate
from ..errors import NearElasticError
from ..kernels import make_stream
from ..topology import locate


class Report:
    def __init__(self):
        self.checks = []

    def add(self, name, ok, **detail):
        self.checks.append({"name": name, "ok": bool(ok), "detail": detail})

    def guard(self, name, fn):
        try:
            fn()
        except NearElasticError as e:
            self.add(name, False, error=f"{type(e).__name__}: {e}")

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.checks)

    def to_dict(self):
        return {"ok": self.ok, "n_checks": len(self.checks), "n_failed": sum(not c["ok"] for c in self.checks),
                "checks": self.checks}


def check_topology(graph, rep: Report, seed: int = 0):
    for e in graph.merged:
        edge = graph.edges[e]
        cl, cr = (graph.edges[c] for c in edge.children)
        rep.add(f"width additivity at well {e + 1}", math.isclose(edge.width, cl.width + cr.width, rel_tol=1e-12),
                width=edge.width, children=[cl.width, cr.width])
        rep.add(f"children of well {e + 1} top out at its bottom", cl.top == edge.bottom == cr.top,
                bottom=edge.bottom, child_tops=[cl.top, cr.top])
    rep.add("every well has bottom < top", all(ed.bottom < ed.top for ed in graph.edges))
    energies = [graph.edges[e].bottom for e in graph.merged]
    rep.add("merged wells numbered in increasing height", energies == sorted(energies), heights=energies)
    rng = make_stream(seed, 991)
    bad = 0
    lo, hi = graph.system.wall_positions[0], graph.system.wall_positions[-1]
    for _ in range(500):
        q = rng.uniform(lo, hi)
        H = rng.uniform(min(graph.system.leaf_floors), graph.system.energy_cap)
        try:
            e = locate(graph, H, q)
        except (NearElasticError, ValueError):
            # below the floor of the leaf holding q
            continue
        ed = graph.edges[e]
        if not (ed.left <= q <= ed.right and ed.bottom <= H and (H < ed.top or ed.parent is None)):
            bad += 1
    rep.add("located well contains the state", bad == 0, samples=500, failures=bad)


def check_kicks(graph, rep: Report):
    seen = set()
    for e in range(graph.n_edges):
        pair = graph.edges[e].pair
        for name, spec in (("xi", pair.xi), ("eta", pair.eta)):
            if spec.text in seen or not spec.has_density or spec.is_degenerate:
                continue
            seen.add(spec.text)
            lo, hi = spec.support
            mass = integrate.quad(lambda x: float(spec.pdf(x)), lo, hi, epsabs=1e-13, epsrel=1e-11)[0]
            m1 = integrate.quad(lambda x: x * float(spec.pdf(x)), lo, hi, epsabs=1e-13, epsrel=1e-11)[0]
            rep.add(f"{spec.text}: density integrates to one", abs(mass - 1) < 1e-8, mass=mass)
            rep.add(f"{spec.text}: mean matches the density", abs(m1 - spec.mean) < 1e-8, quad=m1, closed=spec.mean)
            b = 1.5
            ref = integrate.quad(lambda x: float(spec.pdf(x)) * math.exp(-b * x), lo, hi, epsabs=1e-13, epsrel=1e-11)[0]
            rep.add(f"{spec.text}: exponential moment matches quadrature",
                    abs(spec.log_mgf(b) - math.log(ref)) < 1e-8, value=spec.log_mgf(b), quad=math.log(ref))
        rep.add(f"well {e + 1}: mean kick sum positive", pair.drift > 0, drift=pair.drift)


def check_rate(graph, rep: Report):
    for e in range(graph.n_edges):
        eh = rate.edge_hamiltonian(graph, e)

        def run(eh=eh, e=e):
            props = rate.hamiltonian_properties(eh)
            for k, v in props.items():
                rep.add(f"well {e + 1}: {k.replace('_', ' ')}", v["ok"], **{a: b for a, b in v.items() if a != "ok"})

        rep.guard(f"well {e + 1}: Hamiltonian properties", run)
    table = rate.compute_rate_table(graph)
    rep.add("computed rate table complete, downhill zero", not table.check(graph), problems=table.check(graph))
    return table


def check_meta(graph, table, branch, rep: Report, label: str):
    problems = table.check(graph)
    rep.add(f"{label}: rate table complete, downhill zero", not problems, problems=problems)
    names, D = rate.pairwise_quasipotential(graph, table)
    for o in graph.interior_names:
        i = names.index(o)
        below = [names.index(graph.edges[l].bottom_vertex) for l in graph.subtree_leaves(graph.vertex_edge(o))]
        rep.add(f"{label}: interior vertex {o} falls to an exterior vertex at zero cost",
                any(D[i, j] == 0.0 for j in below))
    ext, V = meta.exterior_V(graph, table)
    rep.add(f"{label}: exterior V diagonal zero", bool(np.all(np.diag(V) == 0)))
    try:
        report = meta.cycle_hierarchy(ext, V)
    except NearElasticError as e:
        rep.add(f"{label}: cycle hierarchy", False, error=str(e))
        return
    rep.add(f"{label}: exit exponents nonnegative", all(c.C >= 0 for c in report.cycles),
            C=report.C_by_label())
    top = [c for i, c in enumerate(report.cycles) if i not in report.parent]
    rep.add(f"{label}: cycles nest into one final cycle", len(top) == 1 and len(top[0].members) == len(ext))
    for i, c in enumerate(report.cycles):
        if i in report.parent:
            par = report.cycles[report.parent[i]]
            rep.add(f"{label}: {report.label(c)} nests in {report.label(par)}", c.members < par.members)
    for x in range(len(ext)):
        c = report.find({x})
        others = [V[x, y] for y in range(len(ext)) if y != x]
        expect = min(others) if others else math.inf
        rep.add(f"{label}: C({{{ext[x]}}}) is the cheapest exit", c.C == expect, C=c.C, min_exit=expect)
    if len(ext) <= 5:
        idx = list(range(len(ext)))
        agree = True
        for c in report.cycles:
            outside = [s for s in idx if s not in c.members]
            if outside:
                a = meta.w_graph_min(idx, V, outside)
                b = meta.w_graph_brute(idx, V, outside)
                agree &= a.value == b.value and a.graphs == b.graphs
        rep.add(f"{label}: W-graph search matches brute force", agree)
    if branch is None:
        return
    try:
        tl = meta.metastable_timeline(graph, table, branch, report=report)
    except NearElasticError as e:
        rep.add(f"{label}: timeline", False, error=str(e))
        return
    sums = [float(t.distribution.sum()) for t in tl]
    rep.add(f"{label}: timeline entries are probability vectors",
            all(abs(s - 1) <= 1e-12 for s in sums) and all(np.all(t.distribution >= 0) for t in tl), sums=sums)
    final = int(np.argmax(tl[-1].distribution))
    mass = [float(t.distribution[final]) for t in tl]
    rep.add(f"{label}: mass at the final state never decreases", all(b >= a - 1e-15 for a, b in zip(mass, mass[1:])),
            state=ext[final], mass=mass)


def validate(cfg, v_entries=None, branch=None) -> dict:
    rep = Report()
    graph = cfg.graph
    check_topology(graph, rep)
    table = None
    if graph.system.kick_pairs is not None:
        check_kicks(graph, rep)
        table = check_rate(graph, rep)
    if branch is None and cfg.branch:
        branch = meta.BranchTable(dict(cfg.branch))
    if branch is None:
        branch = meta.BranchTable.halves(graph)
    if table is not None:
        check_meta(graph, table, branch, rep, "computed V")
    entries = v_entries if v_entries is not None else cfg.vtable
    if entries is not None:
        try:
            supplied = meta.rate_table_from_entries(graph, entries)
        except NearElasticError as e:
            rep.add("supplied V table matches the graph", False, error=str(e))
        else:
            check_meta(graph, supplied, branch, rep, "supplied V")
    return rep.to_dict()
