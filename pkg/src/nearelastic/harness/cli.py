"""Command line entry point.

Every subcommand writes its outputs plus ``manifest.json`` to the output
directory (``--out``, else ``$NEARELASTIC_OUT/<subcommand>``, else
``out/<subcommand>``). ``--from-manifest`` replays a recorded run.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .. import averaging, ladder, meta, microsim, rate
from ..errors import ConfigError, InvariantFailure, NearElasticError
from ..kernels import make_stream, split
from ..topology import WellSystem, build_graph, locate
from .config import Config, parse_config
from .manifest import RunManifest
from .output import to_json, write_csv, write_json, write_plot_script
from .validate import validate

SUBCOMMANDS = ("simulate", "average", "branching", "rate", "rare", "metastable", "validate")
OUT_ENV = "NEARELASTIC_OUT"
DEFAULT_SEED = 20240101


def _stream(seed, sub, *key):
    return make_stream(seed, SUBCOMMANDS.index(sub), *key)


def _need_kicks(cfg: Config, what: str):
    if cfg.system.kick_pairs is None:
        raise ConfigError(f"{what} needs a [kicks] section")


def _start(cfg: Config, params):
    g = cfg.graph
    root = g.edges[g.root]
    H0 = float(params.get("H0") or cfg.sim.get("H0", 2.0 * root.bottom))
    q0 = float(params.get("q0") or cfg.sim.get("q0", 0.5 * (root.left + root.right)))
    return H0, q0


# ---------------------------------------------------------------------------
# subcommands: each returns (summary, output names)


def cmd_simulate(cfg, p, seed, out, workers):
    _need_kicks(cfg, "simulate")
    g = cfg.graph
    H0, q0 = _start(cfg, p)
    eps, T = p["epsilon"], p["horizon"]
    dt = p["grid_dt"]
    streams = split(_stream(seed, "simulate"), p["replicas"])
    finals = []
    first = None
    for r, s in enumerate(streams):
        rec = microsim.run(g, H0, q0, eps, T, dt, s, record_events=(r == 0))
        if r == 0:
            first = rec
        finals.append((r, rec.final.H, rec.final.edge + 1, rec.n_collisions, rec.cap_exceeded,
                       float(rec.H_hat[-1])))
    write_csv(out / "trajectory.csv", ["t", "H_step", "H_hat", "well"],
              zip(first.t, first.H_step, first.H_hat, first.edge + 1))
    write_csv(out / "events.csv", ["t", "side", "kick", "H_pre", "H_post", "well"],
              zip(first.ev_t, first.ev_side, first.ev_kick, first.ev_H_pre, first.ev_H_post, first.ev_edge + 1))
    write_csv(out / "final.csv", ["replica", "H", "well", "collisions", "cap_exceeded", "H_hat_T"], finals)
    write_plot_script(out / "plot.gp", "energy", [("trajectory.csv", 1, 3, "interpolated energy")], "t", "H")
    summary = {"H0": H0, "q0": q0, "epsilon": eps, "horizon": T, "replicas": p["replicas"],
               "mean_final_H": float(np.mean([f[1] for f in finals])),
               "mean_collisions": float(np.mean([f[3] for f in finals]))}
    write_json(out / "summary.json", summary)
    return summary, ["trajectory.csv", "events.csv", "final.csv", "plot.gp", "summary.json"]


def cmd_average(cfg, p, seed, out, workers):
    _need_kicks(cfg, "average")
    g = cfg.graph
    H0, q0 = _start(cfg, p)
    e0 = locate(g, H0, q0)
    eps = p["epsilon"]
    base = averaging.limit_path(g, H0, {n: "left" for n in g.interior_names}, e0)
    T = p["horizon"] if p.get("horizon_given") else float(base.duration)
    dt = p["grid_dt"] or T / 400
    rows = []
    sups = []
    for r, s in enumerate(split(_stream(seed, "average"), p["replicas"])):
        rec = microsim.run(g, H0, q0, eps, T, dt, s, record_events=True)
        dec = averaging.observed_decisions(g, rec)
        dec = {n: dec.get(n, "left") for n in g.interior_names}
        path = averaging.limit_path(g, H0, dec, e0)
        c = averaging.compare(rec, path)
        sups.append(c["sup_before_vertex"])
        rows.append((r, c["first_vertex_time"], c["sup_before_vertex"], c["sup_until_disagreement"],
                     -1 if c["first_disagreement"] is None else c["first_disagreement"], rec.final.edge + 1,
                     averaging.terminal_leaf(path) + 1))
        if r == 0:
            write_csv(out / "replica0.csv", ["t", "H_hat", "H_limit", "well"],
                      zip(rec.t, rec.H_hat, path.energy_at(rec.t), rec.edge + 1))
    write_csv(out / "errors.csv", ["replica", "t_vertex", "sup_before_vertex", "sup_until_disagreement",
                                   "first_disagreement", "final_well", "limit_final_well"], rows)
    write_plot_script(out / "plot.gp", "averaged motion",
                      [("replica0.csv", 1, 2, "simulated"), ("replica0.csv", 1, 3, "limit")], "t", "H")
    sups = np.array(sups)
    summary = {"H0": H0, "epsilon": eps, "replicas": p["replicas"], "T": T,
               "median_sup": float(np.median(sups)), "p95_sup": float(np.percentile(sups, 95)),
               "threshold": 0.05 * H0}
    write_json(out / "summary.json", summary)
    return summary, ["replica0.csv", "errors.csv", "plot.gp", "summary.json"]


def cmd_branching(cfg, p, seed, out, workers):
    _need_kicks(cfg, "branching")
    g = cfg.graph
    method = p["method"]
    vertices = [p["vertex"]] if p.get("vertex") else g.interior_names
    rows = []
    res = {}
    for k, v in enumerate(vertices):
        est = ladder.branching_probabilities(g, v, method, p["budget"], _stream(seed, "branching", k),
                                             workers=workers)
        res[v] = est.to_dict()
        rows.append((v, est.method, est.p_left, est.p_right, est.se, est.ci[0], est.ci[1]))
    write_csv(out / "branching.csv", ["vertex", "method", "p_left", "p_right", "se", "ci_low", "ci_high"], rows)
    write_json(out / "branching.json", res)
    return {"p_left": {v: r["p_left"] for v, r in res.items()}, "method": method}, ["branching.csv",
                                                                                    "branching.json"]


def cmd_rate(cfg, p, seed, out, workers):
    _need_kicks(cfg, "rate")
    g = cfg.graph
    a = cfg.analysis
    betas = np.linspace(a.get("beta_min", -5.0), a.get("beta_max", 5.0), a.get("beta_points", 101))
    n_h = a.get("h_points", 5)
    k_rows, h_rows, l_rows = [], [], []
    info = {}
    for e in range(g.n_edges):
        edge = g.edges[e]
        eh = rate.edge_hamiltonian(g, e)
        K = rate.cumulant_vec(edge.pair, betas)
        k_rows += [(e + 1, b, k) for b, k in zip(betas, K)]
        top = min(edge.top, g.system.energy_cap)
        hs = np.linspace(edge.bottom, top, n_h + 2)[1:-1]
        for h in hs:
            s = float(eh.scale(h))
            h_rows += [(e + 1, h, b, s * k) for b, k in zip(betas, K)]
            zlo, zhi = edge.pair.zeta_range
            alphas = s * np.linspace(zlo, zhi, 41)[1:-1]
            L, badj = rate.legendre_vec(eh, np.full_like(alphas, h), alphas)
            l_rows += [(e + 1, h, al, lv, bv) for al, lv, bv in zip(alphas, L, badj)]
        try:
            bstar = rate.uphill_root(eh)
        except NearElasticError:
            bstar = math.inf
        entry = {"beta_star": bstar, "D": edge.width, "drift": edge.pair.drift}
        if edge.is_leaf:
            fl = rate.EdgeHamiltonian(e, edge.width, edge.pair, "floor", edge.bottom)
            entry["floor_hamiltonian_at_beta_star"] = rate.hamiltonian(fl, edge.bottom, bstar) if math.isfinite(
                bstar) else None
        info[f"well {e + 1}"] = entry
    table = rate.compute_rate_table(g)
    write_csv(out / "cumulant.csv", ["well", "beta", "K0"], k_rows)
    write_csv(out / "hamiltonian.csv", ["well", "h", "beta", "H"], h_rows)
    write_csv(out / "legendre.csv", ["well", "h", "alpha", "L", "beta_adjoint"], l_rows)
    write_csv(out / "quasipotential.csv", ["from", "to", "V", "provenance"], table.rows())
    summary = {"wells": info, "V": {f"{a_}->{b_}": v for (a_, b_), v in sorted(table.entries.items())}}
    write_json(out / "rate.json", summary)
    return summary, ["cumulant.csv", "hamiltonian.csv", "legendre.csv", "quasipotential.csv", "rate.json"]


def cmd_rare(cfg, p, seed, out, workers):
    _need_kicks(cfg, "rare")
    g = cfg.graph
    a = cfg.analysis
    H0, q0 = _start(cfg, p)
    edge = a.get("edge", locate(g, H0, q0) + 1) - 1
    dhs = a.get("dh", [0.1, 0.2, 0.3, 0.4])
    T = a.get("T", 4.0)
    epsilons = [p["epsilon"]] if p.get("epsilon_given") else a.get("epsilons", [0.05, 0.02, 0.01])
    method = p["method"]
    rows = []
    fits = {}
    bstar = rate.uphill_root(g.edges[edge].pair)
    for i, eps in enumerate(epsilons):
        ests = [rate.rare_event_probability(g, edge, H0, dh, T, eps, method, p["budget"],
                                            _stream(seed, "rare", i, j), q0=q0, workers=workers)
                for j, dh in enumerate(dhs)]
        rows += [(eps, r.dh, r.estimate, r.se, r.ci_low, r.ci_high, r.neg_eps_log, r.hits, r.n, r.upper_only)
                 for r in ests]
        y = np.array([r.neg_eps_log for r in ests])
        if len(dhs) >= 2 and np.all(np.isfinite(y)):
            slope, icpt = np.polyfit(np.asarray(dhs, float), y, 1)
            fits[repr(eps)] = {"slope": float(slope), "intercept": float(icpt),
                               "relative_error": float(slope / bstar - 1)}
    write_csv(out / "rare.csv", ["epsilon", "dh", "estimate", "se", "ci_low", "ci_high", "neg_eps_log", "hits", "n",
                                 "upper_only"], rows)
    write_plot_script(out / "plot.gp", "-eps ln P against dh", [("rare.csv", 2, 7, "estimates")], "dh",
                      "-eps ln P")
    summary = {"well": edge + 1, "H0": H0, "T": T, "method": method, "beta_star": bstar, "fits": fits}
    write_json(out / "rare.json", summary)
    return summary, ["rare.csv", "plot.gp", "rare.json"]


def system_from_vtable(entries) -> WellSystem:
    """Synthetic geometry whose merge tree has the adjacency of a V table.

    Leaves V1..VL sit left to right on unit cells; merge vertex O_l gets
    height l - L, so the merge order follows the vertex numbers.
    """
    pairs = {frozenset(k) for k in entries}
    names = {n for k in entries for n in k}
    leaves = sorted((n for n in names if n.startswith("V")), key=lambda s: int(s[1:]))
    inner = sorted((n for n in names if n.startswith("O")), key=lambda s: int(s[1:]))
    L = len(leaves)
    if [int(n[1:]) for n in leaves] != list(range(1, L + 1)) or [int(n[1:]) for n in inner] != list(
            range(L + 1, 2 * L)):
        raise ConfigError("V table vertices must be V1..VL and O(L+1)..O(2L-1)")
    span = {v: (k, k) for k, v in enumerate(leaves)}
    walls = [0.0] * (L - 1)
    for o in inner:
        kids = [n for n in names if n != o and frozenset((n, o)) in pairs and n in span]
        if len(kids) != 2:
            raise ConfigError(f"cannot place {o}: expected two lower neighbours, found {sorted(kids)}")
        (a0, a1), (b0, b1) = sorted(span[k] for k in kids)
        if a1 + 1 != b0:
            raise ConfigError(f"{o} joins wells that are not side by side")
        walls[a1] = float(int(o[1:]) - L)
        span[o] = (a0, b1)
    floors = [0.1 + 0.01 * k for k in range(L)]
    return WellSystem(tuple(range(L + 1)), tuple(walls), tuple(floors), float(L + 1))


def cmd_metastable(cfg, p, seed, out, workers):
    g = cfg.graph
    if p.get("v_table_entries") is not None:
        table = meta.rate_table_from_entries(g, p["v_table_entries"])
    elif cfg.vtable is not None:
        table = meta.rate_table_from_entries(g, cfg.vtable)
    else:
        _need_kicks(cfg, "metastable without a V table")
        table = rate.compute_rate_table(g)
    if p.get("branch"):
        branch = meta.BranchTable.from_sequence(g, p["branch"])
    elif cfg.branch:
        branch = meta.BranchTable(dict(cfg.branch))
    else:
        raise ConfigError("branch probabilities are required (--branch or a [branch] section)")
    branch.check(g)
    res = meta.analyze(g, table, branch)
    names = res["exterior"]
    write_json(out / "cycles.json", res)
    write_csv(out / "timeline.csv", ["scale"] + names,
              [[t["scale"]] + t["distribution"] for t in res["timeline"]])
    write_csv(out / "quasipotential.csv", ["from", "to", "V", "provenance"], table.rows())
    summary = {"C": {"{" + ",".join(c["members"]) + "}": c["C"] for c in res["cycles"]},
               "final": res["timeline"][-1]["distribution"]}
    return summary, ["cycles.json", "timeline.csv", "quasipotential.csv"]


def cmd_validate(cfg, p, seed, out, workers):
    branch = meta.BranchTable.from_sequence(cfg.graph, p["branch"]) if p.get("branch") else None
    rep = validate(cfg, p.get("v_table_entries"), branch)
    write_json(out / "report.json", rep)
    return rep, ["report.json"]


COMMANDS = {"simulate": cmd_simulate, "average": cmd_average, "branching": cmd_branching, "rate": cmd_rate,
            "rare": cmd_rare, "metastable": cmd_metastable, "validate": cmd_validate}


# ---------------------------------------------------------------------------
# argument handling


def build_parser():
    ap = argparse.ArgumentParser(prog="nearelastic", description="Nearly elastic multi-well particle toolkit.")
    ap.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="configuration file")
    ap.add_argument("--seed", type=int, help="master seed (default from [sim] or a fixed value)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--replicas", type=int, help="replica count or sampling budget")
    ap.add_argument("--epsilon", type=float, help="kick scale")
    ap.add_argument("--method", help="mc|ladder|grid for branching, naive|tilted for rare")
    ap.add_argument("--v-table", dest="v_table", help="file of 'FROM TO VALUE' quasi-potential lines")
    ap.add_argument("--branch", help="comma separated left-branch probabilities in merge order")
    ap.add_argument("--workers", type=int, default=1, help="threads for replica blocks (results do not depend on it)")
    ap.add_argument("--json", action="store_true", help="print the summary as JSON")
    ap.add_argument("--from-manifest", dest="from_manifest", help="replay the run recorded in this manifest")
    return ap


def _resolve(sub, args, cfg: Config):
    """Flag values merged with config defaults; this dict is what the manifest records."""
    s, a = cfg.sim, cfg.analysis
    p = {}
    p["epsilon"] = args.epsilon if args.epsilon is not None else s.get("epsilon", 1e-3)
    p["epsilon_given"] = args.epsilon is not None
    p["horizon"] = s.get("horizon", 2.0)
    p["horizon_given"] = "horizon" in s
    p["grid_dt"] = s.get("grid_dt", p["horizon"] / 200 if sub == "simulate" else None)
    p["replicas"] = args.replicas if args.replicas is not None else s.get("replicas", 200 if sub == "average" else 1)
    if sub == "branching":
        p["method"] = args.method or a.get("method", "grid")
        default_budget = {"mc": 100_000, "ladder": 1_000_000, "grid": 4096}.get(p["method"], 100_000)
        p["budget"] = args.replicas if args.replicas is not None else a.get(
            "grid_points" if p["method"] == "grid" else "budget", default_budget)
        p["vertex"] = a.get("vertex")
    elif sub == "rare":
        p["method"] = args.method or a.get("method", "tilted")
        p["budget"] = args.replicas if args.replicas is not None else a.get("budget", 20_000)
    if args.branch:
        try:
            p["branch"] = [float(x) for x in args.branch.split(",")]
        except ValueError:
            raise ConfigError(f"--branch expects comma separated numbers, got {args.branch!r}") from None
    return p


def _out_dir(sub, args) -> Path:
    if args.out:
        d = Path(args.out)
    elif os.environ.get(OUT_ENV):
        d = Path(os.environ[OUT_ENV]) / sub
    else:
        d = Path("out") / sub
    d.mkdir(parents=True, exist_ok=True)
    return d


def execute(sub, cfg: Config, params: dict, seed: int, out: Path, workers: int = 1, v_table_text=None):
    t0 = time.perf_counter()
    summary, names = COMMANDS[sub](cfg, params, seed, out, workers)
    man = RunManifest(sub, seed, {k: v for k, v in params.items() if k != "v_table_entries"},
                      cfg.sha256 if cfg.text else None, cfg.text or None, v_table_text)
    man.duration_s = round(time.perf_counter() - t0, 3)
    man.record_outputs(out, names)
    man.write(out)
    return summary, man


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _main(args)
    except NearElasticError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def _main(args) -> int:
    if args.from_manifest:
        man = RunManifest.load(args.from_manifest)
        sub = man.subcommand
        if args.subcommand and args.subcommand != sub:
            raise ConfigError(f"manifest records '{sub}', not '{args.subcommand}'")
        v_text = man.v_table_text
        if man.config_text is not None:
            cfg = parse_config(man.config_text)
        elif v_text is not None:
            cfg = _vtable_config(meta.parse_v_table(v_text))
        else:
            raise ConfigError("manifest has neither a config nor a V table")
        params = dict(man.params)
        if v_text is not None:
            params["v_table_entries"] = meta.parse_v_table(v_text)
        seed = man.seed
    else:
        sub = args.subcommand
        if sub is None:
            build_parser().print_usage(sys.stderr)
            return 2
        v_text = None
        entries = None
        if args.v_table:
            v_text = Path(args.v_table).read_text(encoding="utf-8")
            entries = meta.parse_v_table(v_text)
        if args.config:
            cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
        elif entries is not None and sub in ("metastable", "validate"):
            cfg = _vtable_config(entries)
        else:
            raise ConfigError(f"{sub} needs --config")
        params = _resolve(sub, args, cfg)
        if entries is not None:
            params["v_table_entries"] = entries
        seed = args.seed if args.seed is not None else cfg.sim.get("seed", DEFAULT_SEED)
    out = _out_dir(sub, args)
    summary, man = execute(sub, cfg, params, seed, out, args.workers, v_text)
    if args.json:
        sys.stdout.write(to_json(summary))
    else:
        print(f"{sub}: wrote {', '.join(sorted(man.outputs))} to {out}")
    if sub == "validate" and not summary["ok"]:
        failed = [c["name"] for c in summary["checks"] if not c["ok"]]
        print(f"validate: {len(failed)} invariant(s) failed: {'; '.join(failed)}", file=sys.stderr)
        return InvariantFailure.exit_code
    return 0


def _vtable_config(entries) -> Config:
    system = system_from_vtable(entries)
    return Config(system, build_graph(system), {}, {}, None, None, "")


if __name__ == "__main__":
    sys.exit(main())
