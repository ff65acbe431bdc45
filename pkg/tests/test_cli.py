import csv
import io
import json
import subprocess
import sys

import pytest

from cimtune.cli import main
from cimtune.workload import load_workload

from conftest import example

PROTO = ["--macro", example("macro_prototype.json")]
COEFFS = ["--coeffs", example("coeffs_default.json")]
MINIMAL = ["--workload", example("workload_minimal.json")]
CFG = ["--config", example("config_minimal.json")]


def run(tmp_path, *args):
    return main(["--out-dir", str(tmp_path), *args])


def load(tmp_path, name):
    return json.loads((tmp_path / name).read_text())


def test_simulate_smoke(tmp_path, capsys):
    assert run(tmp_path, "simulate", *PROTO, *CFG, *COEFFS, *MINIMAL) == 0
    doc = load(tmp_path, "simulate.json")
    agg = doc["runs"]["auto"]["aggregate"]
    w = load_workload(example("workload_minimal.json"))
    assert agg["cycles"] > 0 and agg["macs"] == sum(o.m * o.k * o.n for o in w.ops)
    assert (tmp_path / "simulate.txt").read_text() == capsys.readouterr().out
    man = load(tmp_path, "manifest.simulate.json")
    assert man["command"] == "simulate" and len(man["inputs"]) == 4
    assert all(len(v) == 64 for v in man["inputs"].values())


def test_auto_beats_fixed(tmp_path):
    assert run(tmp_path, "simulate", *PROTO, *CFG, *COEFFS, *MINIMAL, "--strategy", "NR-IP-AF") == 0
    fixed = load(tmp_path, "simulate.json")["runs"]["NR-IP-AF"]["aggregate"]["pj_per_op"]
    assert run(tmp_path, "simulate", *PROTO, *CFG, *COEFFS, *MINIMAL) == 0
    auto = load(tmp_path, "simulate.json")["runs"]["auto"]["aggregate"]["pj_per_op"]
    assert auto <= fixed


def test_tradeoff_breakdown(tmp_path):
    args = ["--breakdown", "simulate", *PROTO, "--config", example("config_tradeoff.json"), *COEFFS,
            "--workload", example("workload_attention.json"), "--strategy", "NR-IP-AF,NR-IP-PF"]
    assert run(tmp_path, *args) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "breakdown.csv").read_text())))
    e = {(r["strategy"], r["category"]): float(r["energy_pj"]) for r in rows}
    af_os = e["NR-IP-AF", "Output SRAM"] + e["NR-IP-AF", "EMA (psum)"]
    pf_os = e["NR-IP-PF", "Output SRAM"] + e["NR-IP-PF", "EMA (psum)"]
    assert af_os < pf_os
    assert e["NR-IP-PF", "Input SRAM"] < e["NR-IP-AF", "Input SRAM"]


def test_dump_plan(tmp_path):
    assert run(tmp_path, "--dump-plan", "simulate", *PROTO, *CFG, *COEFFS, *MINIMAL) == 0
    plans = sorted(p.name for p in (tmp_path / "plans").iterdir())
    assert any(p.endswith(".plan.json") for p in plans)
    flow = next(p for p in (tmp_path / "plans").iterdir() if p.name.endswith(".flow.txt")).read_text()
    assert flow.startswith("# op=") and flow.rstrip().endswith("BAR -")
    trace = next(p for p in (tmp_path / "plans").iterdir() if p.name.endswith(".trace.csv")).read_text()
    assert trace.startswith("idx,space,dir,addr,bits\n")


def test_input_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x", "ops": [{"id": "a", "m": 1, "k": 0, "n": 1}]}')
    assert run(tmp_path, "simulate", *PROTO, *CFG, *COEFFS, "--workload", str(bad)) == 2
    assert run(tmp_path, "simulate", *PROTO, *CFG, *COEFFS, "--workload", str(tmp_path / "nope.json")) == 2
    assert run(tmp_path, "simulate", *PROTO, *CFG, *COEFFS) == 2
    assert run(tmp_path, "simulate", *PROTO, *CFG, *COEFFS, *MINIMAL, "--strategy", "NR-XX-AF") == 2


def test_infeasible_plan(tmp_path):
    tiny = tmp_path / "tiny.json"
    tiny.write_text('{"mr": 1, "mc": 1, "bw": 128, "is_size": 64, "os_size": 64}')
    assert run(tmp_path, "simulate", *PROTO, "--config", str(tiny), *COEFFS, *MINIMAL) == 3


def test_sweep_axis_and_order(tmp_path):
    base = ["sweep", *PROTO, *COEFFS, *CFG, *MINIMAL]
    assert run(tmp_path, *base, "--axis", "mr=1,2,4") == 0
    a = list(csv.DictReader(io.StringIO((tmp_path / "sweep.csv").read_text())))
    assert [int(r["mr"]) for r in a] == [1, 2, 4]
    assert run(tmp_path, *base, "--axis", "mr=4,1,2") == 0
    b = list(csv.DictReader(io.StringIO((tmp_path / "sweep.csv").read_text())))
    strip = lambda rows: sorted(tuple(v for k, v in r.items() if k != "point") for r in rows)  # noqa: E731
    assert strip(a) == strip(b)
    assert run(tmp_path, *base, "--axis", "scr=3") == 2
    assert run(tmp_path, *base, "--axis", "bw=1024") == 2


def test_single_point_sweep_matches_simulate(tmp_path):
    assert run(tmp_path, "sweep", *PROTO, *COEFFS, *CFG, *MINIMAL, "--axis", "mr=1",
               "--objective", "energy_eff") == 0
    row = next(csv.DictReader(io.StringIO((tmp_path / "sweep.csv").read_text())))
    assert run(tmp_path, "simulate", *PROTO, *CFG, *COEFFS, *MINIMAL) == 0
    agg = load(tmp_path, "simulate.json")["runs"]["auto"]["aggregate"]
    assert int(row["cycles"]) == agg["cycles"]
    assert float(row["energy_pj"]) == agg["energy_pj"]


def test_split_area_sweep(tmp_path):
    assert run(tmp_path, "sweep", *PROTO, *COEFFS, *MINIMAL, "--split-area", "4") == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "sweep.csv").read_text())))
    assert len(rows) >= 3 and all(float(r["area_mm2"]) <= 4 for r in rows)
    assert run(tmp_path, "sweep", *PROTO, *COEFFS, *MINIMAL, "--split-area", "0.01") == 2


EXPLORE = ["explore", "--macro", example("macro_trancim_like.json"), "--coeffs", example("coeffs_trancim_like.json"),
           "--space", example("space_trancim.json"), *MINIMAL]


def test_explore_repeatable(tmp_path):
    one, two = tmp_path / "a", tmp_path / "b"
    assert run(one, *EXPLORE, "--baseline", example("config_trancim_base.json")) == 0
    assert run(two, *EXPLORE, "--baseline", example("config_trancim_base.json")) == 0
    for name in ("explore.json", "history.csv"):
        assert (one / name).read_text() == (two / name).read_text()
    doc = load(one, "explore.json")
    assert doc["cost"] <= doc["baseline"]["cost"]
    assert doc["area_mm2"] <= 3.52
    assert doc["space"]["pruned_fraction"] > 0


def test_explore_from_manifest(tmp_path):
    assert run(tmp_path / "a", *EXPLORE, "--method", "anneal") == 0
    man = load(tmp_path / "a", "manifest.explore.json")
    argv = list(man["argv"])
    argv[argv.index("--out-dir") + 1] = str(tmp_path / "b")
    assert main(argv) == 0
    assert (tmp_path / "a" / "explore.json").read_text() == (tmp_path / "b" / "explore.json").read_text()


def test_explore_budget_error(tmp_path, capsys):
    assert run(tmp_path, *EXPLORE, "--budget", "0.5") == 4
    assert "budget" in capsys.readouterr().err


def test_validate(tmp_path):
    base = ["validate", *PROTO, *CFG, *MINIMAL]
    assert run(tmp_path, *base) == 0
    doc = load(tmp_path, "validation.json")
    assert doc["failed"] == 0 and len(doc["results"]) == 16
    assert run(tmp_path, *base, "--mutate", "drop-cmp") == 5
    doc = load(tmp_path, "validation.json")
    assert doc["failed"] > 0
    assert any(r["first_divergence"] for r in doc["results"] if r["status"] == "fail")
    assert run(tmp_path, *base, "--strategies", ",") == 2


def test_report(tmp_path, capsys):
    assert run(tmp_path, "simulate", *PROTO, *CFG, *COEFFS, *MINIMAL) == 0
    capsys.readouterr()
    assert run(tmp_path, "--breakdown", "report", "--input", str(tmp_path / "simulate.json")) == 0
    assert "TOTAL" in capsys.readouterr().out
    assert (tmp_path / "breakdown.csv").exists()
    other = tmp_path / "other.json"
    other.write_text("{}")
    assert run(tmp_path, "report", "--input", str(other)) == 2


def test_console_script_entry(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cimtune.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("cimtune ")
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2
