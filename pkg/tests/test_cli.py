import csv
import hashlib
import json

import pytest

from latebind.cli import main
from latebind.profiler import extract_profile, read_profiles, read_samples
from latebind.reporting import REQUEST_HEADER
from latebind.scenario import load_scenario

WORKFLOW = {
    "name": "mini",
    "functions": ["a", "b"],
    "slo_ms": 420,
    "grid": {"k_min": 1000, "k_max": 1400, "step": 100},
    "percentiles": {"values": [1, 25, 50, 75, 99]},
}
SCENARIO = {
    "name": "mini",
    "workflow": "workflow.json",
    "families": [
        {"name": "a", "serial_ms": 20, "parallel_ms": 180, "p99_p50": 1.4},
        {"name": "b", "serial_ms": 10, "parallel_ms": 90, "p99_p50": 1.3},
    ],
    "samples_per_size": 100,
    "policies": ["late_bind", "early_bind_p99", "optimal"],
    "n_requests": 60,
    "seed": 2,
}


@pytest.fixture
def world(tmp_path):
    (tmp_path / "workflow.json").write_text(json.dumps(WORKFLOW))
    (tmp_path / "scenario.json").write_text(json.dumps(SCENARIO))
    return tmp_path


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _pipeline(world, capsys=None):
    assert main(["generate-samples", str(world / "scenario.json"), "--out", str(world / "samples.csv")]) == 0
    assert main(["profile", str(world / "samples.csv"), "--workflow", str(world / "workflow.json"),
                 "--out", str(world / "profiles.csv")]) == 0
    assert main(["synthesize", "--profiles", str(world / "profiles.csv"), "--workflow", str(world / "workflow.json"),
                 "--out-dir", str(world / "hints")]) == 0


def test_profile_matches_library(world):
    _pipeline(world)
    sc = load_scenario(world / "scenario.json")
    got = read_profiles(world / "profiles.csv")
    for key, samples in read_samples(world / "samples.csv").items():
        assert got[key] == extract_profile(samples, sc.config.grid, sc.config.percentiles)


def test_profile_input_errors(world, capsys):
    empty = world / "empty.csv"
    empty.write_text("")
    assert main(["profile", str(empty), "--out", str(world / "p.csv")]) == 2
    assert "no samples" in capsys.readouterr().err
    dup = world / "dup.csv"
    dup.write_text("function,batch,millicores,millicores\n")
    assert main(["profile", str(dup), "--out", str(world / "p.csv")]) == 2
    assert "line 1" in capsys.readouterr().err
    assert not (world / "p.csv").exists()


def test_synthesize_reports_ratio_and_is_deterministic(world, capsys):
    _pipeline(world)
    out = capsys.readouterr().out
    assert "compression ratio" in out
    stats = json.loads((world / "hints" / "synthesis_stats.json").read_text())
    assert stats["raw_hints"] >= stats["rows"] > 0
    assert stats["compression_ratio"] == pytest.approx(1 - stats["rows"] / stats["raw_hints"])
    first = {p.name: _digest(p) for p in (world / "hints").iterdir()}
    _pipeline(world)
    assert first == {p.name: _digest(p) for p in (world / "hints").iterdir()}


def test_single_budget_range_gives_one_row(world):
    wf = dict(WORKFLOW, functions=["c"])
    (world / "one.json").write_text(json.dumps(wf))
    rows = ["function,batch,percentile,millicores,latency_ms"]
    rows += [f"c,1,{p},{k},50" for p in (1, 25, 50, 75, 99) for k in range(1000, 1500, 100)]
    (world / "flat.csv").write_text("\n".join(rows) + "\n")
    assert main(["synthesize", "--profiles", str(world / "flat.csv"), "--workflow", str(world / "one.json"),
                 "--out-dir", str(world / "h1")]) == 0
    stats = json.loads((world / "h1" / "synthesis_stats.json").read_text())
    assert stats["rows"] == 1 and stats["raw_hints"] == 1 and stats["compression_ratio"] == 0


def test_synthesize_missing_profile_is_input_error(world, capsys):
    _pipeline(world)
    wf = dict(WORKFLOW, functions=["a", "zzz"])
    (world / "bad.json").write_text(json.dumps(wf))
    code = main(["synthesize", "--profiles", str(world / "profiles.csv"), "--workflow", str(world / "bad.json"),
                 "--out-dir", str(world / "h2")])
    assert code == 2
    assert not (world / "h2").exists() or not any((world / "h2").iterdir())


def test_simulate_outputs_and_determinism(world):
    args = ["simulate", str(world / "scenario.json"), "--out-dir"]
    assert main(args + [str(world / "r1")]) == 0
    assert main(args + [str(world / "r2")]) == 0
    for name in ("summary.json", "requests.csv", "latency_cdf.csv", "consumption.csv"):
        assert _digest(world / "r1" / name) == _digest(world / "r2" / name)
    doc = json.loads((world / "r1" / "summary.json").read_text())
    assert set(doc["policies"]) == {"late_bind", "early_bind_p99", "optimal"}
    assert doc["normalized_by_optimal"]["optimal"] == 1.0
    with open(world / "r1" / "requests.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == REQUEST_HEADER and len(rows) == 3 * 60
    assert main(args + [str(world / "r3"), "--seed", "9"]) == 0
    assert _digest(world / "r1" / "requests.csv") != _digest(world / "r3" / "requests.csv")


def test_simulate_decision_log(world):
    log = world / "decisions.jsonl"
    assert main(["simulate", str(world / "scenario.json"), "--out-dir", str(world / "r"),
                 "--policies", "late_bind", "--decision-log", str(log)]) == 0
    lines = [json.loads(x) for x in log.read_text().splitlines()]
    assert lines and all(x["suffix"] in (1, 2) for x in lines)


def test_usage_and_infeasible_exit_codes(world, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", str(world / "scenario.json"), "--out-dir", str(world / "r"), "--policies", "fastest"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert main(["simulate", str(world / "scenario.json"), "--out-dir", str(world / "r"), "--n-requests", "0"]) == 1
    tight = dict(WORKFLOW, slo_ms=50)
    (world / "workflow.json").write_text(json.dumps(tight))
    assert main(["simulate", str(world / "scenario.json"), "--out-dir", str(world / "r"),
                 "--policies", "early_bind_p99"]) == 3
    assert not (world / "r" / "summary.json").exists()
    assert main(["simulate", str(world / "missing.json"), "--out-dir", str(world / "r")]) == 2


def test_report_single_and_merged(world):
    for seed, name in ((2, "r1"), (3, "r2")):
        assert main(["simulate", str(world / "scenario.json"), "--out-dir", str(world / name),
                     "--seed", str(seed)]) == 0
    assert main(["report", str(world / "r1"), "--out-dir", str(world / "plots")]) == 0
    with open(world / "plots" / "latency_cdf.csv") as fh:
        rows = list(csv.DictReader(fh))
    for pol in {r["policy"] for r in rows}:
        pts = [(float(r["end_to_end_ms"]), float(r["cumulative_fraction"])) for r in rows if r["policy"] == pol]
        assert pts == sorted(pts) and pts[-1][1] == 1.0
    assert (world / "plots" / "hitmiss.csv").exists()
    assert main(["report", str(world / "r1"), str(world / "r2"), "--out-dir", str(world / "both")]) == 0
    with open(world / "both" / "comparison.csv") as fh:
        merged = list(csv.DictReader(fh))
    assert {r["run"] for r in merged} == {str(world / "r1"), str(world / "r2")}
    assert (world / "both" / "r1_consumption.csv").exists()


def test_report_schema_error(world, capsys):
    assert main(["simulate", str(world / "scenario.json"), "--out-dir", str(world / "r1")]) == 0
    path = world / "r1" / "requests.csv"
    text = path.read_text().splitlines()
    text[0] = text[0].replace("millicore_ms", "cpu_ms")
    path.write_text("\n".join(text) + "\n")
    assert main(["report", str(world / "r1"), "--out-dir", str(world / "plots")]) == 2
    assert "missing field 'millicore_ms'" in capsys.readouterr().err
    assert not (world / "plots").exists() or not any((world / "plots").iterdir())


def test_bundled_scenario_name_resolves(tmp_path):
    assert main(["generate-samples", "demo", "--out", str(tmp_path / "s.csv"), "--n", "100"]) == 0
    assert len(read_samples(tmp_path / "s.csv")) == 3
