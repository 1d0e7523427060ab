import csv
import json
import subprocess
import sys

import pytest

from hocsearch.cli import main


def run(*argv):
    assert main([str(a) for a in argv]) == 0


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run("gen-db", "--count", 10, "--seed", 1, "--out", root / "db")
    run("gen-scenes", "--db", root / "db", "--count", 2, "--sigma", 0.005, "--dropout", 0.1, "--occluders", 0.2,
        "--frames", 14, "--seed", 2, "--out", root / "scenes")
    run("build-tree", "--db", root / "db", "--k", 3, "--pose-angles", "0,90,180,270", "--seed", 0,
        "--out", root / "tree.json")
    return root


def test_pipeline_files(work):
    assert (work / "db" / "db.json").exists()
    assert sorted(p.name for p in (work / "scenes").iterdir()) == ["scene_000", "scene_001"]
    assert json.loads((work / "tree.json").read_text())["db"] == "db"


def test_search_writes_result_and_trace(work):
    out = work / "r" / "hoc.json"
    run("search", "--tree", work / "tree.json", "--scene", work / "scenes" / "scene_000", "--objective", "rac",
        "--iters", 12, "--seed", 3, "--out", out)
    doc = json.loads(out.read_text())
    assert doc["evaluations"] == 12 and doc["version"] == 1
    trace = [json.loads(line) for line in (work / "r" / "hoc.trace.jsonl").read_text().splitlines()]
    assert [t["iter"] for t in trace] == list(range(1, 13))
    assert set(trace[0]) == {"iter", "leaf", "angle", "loss", "score", "best_so_far", "refined"}
    assert doc["loss"] == -max(t["score"] for t in trace)


def test_search_matches_exhaustive_at_full_budget(work):
    scene = work / "scenes" / "scene_001"
    run("exhaustive", "--db", work / "db", "--scene", scene, "--objective", "rac", "--out", work / "ex.json")
    run("search", "--tree", work / "tree.json", "--scene", scene, "--iters", 40, "--seed", 0,
        "--out", work / "full.json")
    ex = json.loads((work / "ex.json").read_text())
    full = json.loads((work / "full.json").read_text())
    assert len(ex["ranked"]) == ex["evaluations"] == 40
    assert (full["best_shape"], full["best_angle"]) == (ex["best_shape"], ex["best_angle"])


def test_config_file_and_flag_precedence(work, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iterations": 7, "score_mode": "minmax", "seed": 4}))
    run("search", "--tree", work / "tree.json", "--scene", work / "scenes" / "scene_000", "--config", cfg,
        "--iters", 5, "--out", tmp_path / "o.json")
    doc = json.loads((tmp_path / "o.json").read_text())
    assert doc["config"]["iterations"] == 5 and doc["config"]["score_mode"] == "minmax"
    assert doc["config"]["seed"] == 4 and doc["config"]["lambda_start"] == 20.0


def test_baselines(work, tmp_path):
    scene = work / "scenes" / "scene_000"
    run("baseline", "--method", "greedy", "--tree", work / "tree.json", "--scene", scene, "--out", tmp_path / "g.json")
    run("baseline", "--method", "nn-rerank", "--n", 2, "--db", work / "db", "--scene", scene,
        "--out", tmp_path / "n.json")
    assert json.loads((tmp_path / "n.json").read_text())["evaluations"] == 8
    assert json.loads((tmp_path / "g.json").read_text())["method"] == "greedy"


def test_bench_and_eval(work, tmp_path):
    out = tmp_path / "report.csv"
    run("bench", "--scenes", work / "scenes", "--tree", work / "tree.json", "--methods", "hoc,greedy,nn-rerank",
        "--iters", 8, "--n", 2, "--seed", 1, "--out", out)
    rows = list(csv.DictReader(out.open()))
    hoc = [r for r in rows if r["method"] == "hoc"]
    assert len(hoc) == 2 and all(float(r["speedup"]) == 40 / 8 for r in hoc)
    summary = json.loads(out.with_suffix(".json").read_text())["aggregates"]
    assert summary["hoc"]["speedup"] == 5.0 and summary["exhaustive"]["speedup"] == 1.0
    run("eval", "--results", tmp_path / "report_results", "--reference", "exhaustive", "--k", "1,5",
        "--out", tmp_path / "m.json")
    metrics = json.loads((tmp_path / "m.json").read_text())
    assert metrics["methods"]["exhaustive"]["top1"] == 1.0
    assert metrics["methods"]["hoc"]["top1"] == summary["hoc"]["top1_exhaustive"]
    run("eval", "--results", tmp_path / "report_results", "--reference", "gt", "--k", "1",
        "--out", tmp_path / "g.json")


def test_bench_workers_match_serial(work, tmp_path):
    args = ["bench", "--scenes", work / "scenes", "--tree", work / "tree.json", "--methods", "hoc,greedy",
            "--iters", 6, "--seed", 2]
    run(*args, "--out", tmp_path / "a.csv")
    run(*args, "--workers", 2, "--out", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_missing_file_is_an_error(tmp_path, capsys):
    assert main(["search", "--tree", str(tmp_path / "nope.json"), "--scene", str(tmp_path), "--out",
                 str(tmp_path / "x.json")]) != 0
    assert "nope.json" in capsys.readouterr().err


def test_unknown_flag_exits_nonzero():
    proc = subprocess.run([sys.executable, "-m", "hocsearch", "gen-db", "--bogus", "1", "--out", "x"],
                          capture_output=True, text=True)
    assert proc.returncode != 0 and "unrecognized arguments" in proc.stderr


def test_unknown_family(tmp_path, capsys):
    assert main(["gen-db", "--families", "sofa", "--out", str(tmp_path / "d")]) != 0
    assert "unknown families" in capsys.readouterr().err
