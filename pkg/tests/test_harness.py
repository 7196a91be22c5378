import csv
import json
import math

import numpy as np
import pytest
from conftest import FIXTURES

from nearelastic.errors import ConfigError, TopologyError
from nearelastic.harness.cli import main
from nearelastic.harness.config import load_config, parse_config
from nearelastic.harness.manifest import RunManifest
from nearelastic.harness.output import to_json, write_csv

MINIMAL = """[walls]
0
1
[floors]
0.5
[kicks]
default = uniform(-0.5, 1.0)  uniform(-0.2, 0.4)
"""


def test_four_well_config():
    cfg = load_config(FIXTURES / "four-well.cfg")
    g = cfg.graph
    assert len(g.edges) == 7
    for e in g.merged:
        a, b = g.edges[e].children
        assert math.isclose(g.edges[e].width, g.edges[a].width + g.edges[b].width)
    assert cfg.sim["seed"] == 7 and cfg.branch == {"O5": 0.3, "O6": 0.6, "O7": 0.7}
    assert cfg.vtable[("V3", "O6")] == 6.0


def test_minimal_config():
    cfg = parse_config(MINIMAL)
    assert len(cfg.graph.edges) == 1 and cfg.sim == {} and cfg.vtable is None


@pytest.mark.parametrize("text,line,col", [
    ("[walls]\n0\n1\n[floors]\n0.5\n[kicks]\ndefault = uniform(-0.5, 1.0)\n", 7, 10),
    ("[walls]\n0\n1\n[floors]\n0.5\n[kicks]\ndefault = uniform(-0.5, 1.0)  uniform(-0.2, 0.4)\n[sim]\n"
     "  bogus = 1\n", 9, 3),
    ("[walls]\n0\n1 2.0\n2\n[floors]\n0.5 0.5\n[kicks]\ndefault = uniform(0, 1) uniform(0, 1)\n[vtable]\n"
     "V1 O3 -1\n", 10, 7),
    ("stray\n[walls]\n", 1, 1),
], ids=["one-spec", "unknown-key", "negative-v", "stray-text"])
def test_config_errors_carry_location(text, line, col):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert (e.value.line, e.value.column) == (line, col)
    assert f"line {line}" in str(e.value)


def test_tied_walls_are_named():
    text = "[walls]\n0\n1 2.0\n2 2.0\n3\n[floors]\n0.1 0.1 0.1\n[kicks]\ndefault = uniform(0,1) uniform(0,1)\n"
    with pytest.raises(TopologyError, match=r"wall 2 .* wall 3"):
        parse_config(text)


def test_unknown_kick_family():
    with pytest.raises(ConfigError):
        parse_config(MINIMAL.replace("uniform(-0.5, 1.0)", "cauchy(0, 1)"))


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[walls]\n0\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "a")]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["simulate", "--out", str(tmp_path / "a")]) == 2
    assert main(["validate", "--config", str(FIXTURES / "four-well.cfg"), "--out", str(tmp_path / "v")]) == 0
    rep = json.loads((tmp_path / "v" / "report.json").read_text())
    assert rep["ok"] and rep["n_failed"] == 0
    partial = tmp_path / "partial.vt"
    partial.write_text("V1 O5 2\nV2 O5 1\n")
    code = main(["validate", "--config", str(FIXTURES / "four-well.cfg"), "--v-table", str(partial),
                 "--out", str(tmp_path / "w")])
    assert code == 5
    assert "invariant" in capsys.readouterr().err
    # kicks with sum a.s. nonnegative cannot drive a climb
    cfg = tmp_path / "pos.cfg"
    cfg.write_text(MINIMAL.replace("uniform(-0.2, 0.4)", "uniform(0.1, 0.4)").replace("-0.5, 1.0", "0.2, 1.0")
                   + "[sim]\nH0 = 2.0\nq0 = 0.5\n[analysis]\ndh = 0.1\nepsilons = 0.05\nT = 1.0\nbudget = 10\n")
    assert main(["rare", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 3


def test_cli_metastable_matches_regression(tmp_path):
    out = tmp_path / "m"
    assert main(["metastable", "--v-table", str(FIXTURES / "four-well.vt"), "--branch", "0.3,0.6,0.7",
                 "--out", str(out)]) == 0
    ref = json.loads((FIXTURES / "four-well-regression.json").read_text())
    with open(out / "timeline.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["scale"] + ref["exterior"]
    assert [float(r[0]) for r in rows[1:]] == [e["scale"] for e in ref["timeline"]]
    for r, e in zip(rows[1:], ref["timeline"]):
        assert np.allclose([float(x) for x in r[1:]], e["U"], atol=ref["tolerance"], rtol=0)
    cycles = json.loads((out / "cycles.json").read_text())["cycles"]
    got = {tuple(c["members"]): c["C"] for c in cycles}
    for e in ref["exit_exponents"]:
        assert got[tuple(e["members"])] == e["C"]


def test_cli_json_summary(tmp_path, capsys):
    assert main(["metastable", "--config", str(FIXTURES / "four-well.cfg"), "--json", "--out", str(tmp_path)]) == 0
    s = json.loads(capsys.readouterr().out)
    assert s["C"]["{V1,V2}"] == 3 and s["C"]["{V1,V2,V3,V4}"] == "inf"


def test_output_writers(tmp_path):
    p = write_csv(tmp_path / "x.csv", ["a", "b", "c"], [[0.1, 3, True], [math.inf, np.float64(1 / 3), "s"]])
    assert p.read_text() == "a,b,c\n0.1,3,1\ninf,0.3333333333333333,s\n"
    assert float(p.read_text().split("\n")[2].split(",")[1]) == 1 / 3
    txt = to_json({"b": np.arange(2), "a": -math.inf, "c": (np.bool_(True), np.int64(4))})
    assert txt == '{\n  "a": "-inf",\n  "b": [\n    0,\n    1\n  ],\n  "c": [\n    true,\n    4\n  ]\n}\n'


def test_manifest_round_trip_and_verify(tmp_path):
    (tmp_path / "a.txt").write_text("one\n")
    man = RunManifest("rate", 3, {"epsilon": 0.01}, config_text="x")
    man.record_outputs(tmp_path, ["a.txt"])
    man.write(tmp_path)
    back = RunManifest.load(tmp_path)
    assert back == man and back.verify(tmp_path) == []
    (tmp_path / "a.txt").write_text("two\n")
    assert back.verify(tmp_path) == ["a.txt"]
    (tmp_path / "a.txt").unlink()
    assert back.verify(tmp_path) == ["a.txt"]


def test_replay_rejects_other_subcommand(tmp_path):
    out = tmp_path / "m"
    assert main(["metastable", "--v-table", str(FIXTURES / "four-well.vt"), "--branch", "0.3,0.6,0.7",
                 "--out", str(out)]) == 0
    assert main(["rate", "--from-manifest", str(out / "manifest.json"), "--out", str(tmp_path / "n")]) == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("NEARELASTIC_OUT", str(tmp_path))
    assert main(["metastable", "--v-table", str(FIXTURES / "four-well.vt"), "--branch", "0.3,0.6,0.7"]) == 0
    assert (tmp_path / "metastable" / "manifest.json").exists()
