import csv
import io
import json

import numpy as np
import pytest

from hocsearch.metrics import EvalReport, Placement, QueryRecord, mean_chamfer_report, topk_ra
from hocsearch.synth import SceneSpec, gen_database, gen_scene


def test_topk_ra_hand_cases():
    retrieved = {"a": [3, 4, 5], "b": [1, 2, 9]}
    assert topk_ra(["a", "b"], retrieved, {"a": 4, "b": 7}) == 0.5
    assert topk_ra(["a", "b"], retrieved, {"a": 4, "b": 9}, k=2) == 0.5
    assert topk_ra(["a", "b"], retrieved, {"a": 4, "b": 9}, k=3) == 1.0


def test_topk_ra_with_whole_database_is_one():
    ids = list(range(10))
    ranked = {q: list(np.random.default_rng(q).permutation(ids)) for q in range(5)}
    assert topk_ra(range(5), ranked, {q: q + 2 for q in range(5)}, k=10) == 1.0


def test_topk_ra_errors():
    with pytest.raises(ValueError, match="at least one"):
        topk_ra([], {}, {})
    with pytest.raises(ValueError, match="without a reference"):
        topk_ra(["a"], {"a": [1]}, {})
    with pytest.raises(ValueError):
        topk_ra(["a"], {"a": [1]}, {"a": 1}, k=0)


@pytest.fixture(scope="module")
def placements():
    # solid cylinders against thin-topped tables: the two most dissimilar families
    db = gen_database(families=("cylinder", "table"), count=8, seed=2)
    scenes = [gen_scene(db, SceneSpec(gt_shape=i, seed=40 + i)) for i in range(8)]
    gt = {s.name + str(i): Placement(db[s.gt_shape].mesh, s.gt_pose, s.gt_box) for i, s in enumerate(scenes)}
    return db, scenes, gt


def test_correct_retrievals_sit_at_the_noise_floor(placements):
    db, scenes, gt = placements
    correct = mean_chamfer_report({q: Placement(p.mesh, p.pose) for q, p in gt.items()}, gt)
    assert correct < 0.03


def test_wrong_retrievals_score_far_worse(placements):
    db, scenes, gt = placements
    queries = sorted(gt)
    correct = mean_chamfer_report({q: Placement(gt[q].mesh, gt[q].pose) for q in queries}, gt)
    # shift meshes by one query: families alternate, so every query gets the other family
    shuffled = {q: Placement(gt[queries[(i + 1) % len(queries)]].mesh, gt[q].pose) for i, q in enumerate(queries)}
    assert mean_chamfer_report(shuffled, gt) >= 10 * correct


def test_missing_ground_truth_lists_queries(placements):
    db, scenes, gt = placements
    some = next(iter(gt.values()))
    with pytest.raises(ValueError, match=r"\['q7', 'q9'\]"):
        mean_chamfer_report({"q9": some, "q7": some}, gt)


def records(leaves=2000, iters=(100, 100)):
    out = []
    for i, b in enumerate(iters):
        q = f"s{i}"
        out.append(QueryRecord(q, "exhaustive", 1, 0.0, 0.1, leaves, leaves, 1, 0.01, [1, 2, 3, 4, 5, 6]))
        out.append(QueryRecord(q, "hoc", 2 if i else 1, 90.0, 0.2, b, leaves, 1, 0.02, [2, 1] if i else [1, 2]))
    return out


def test_speedup_is_leaves_over_iterations():
    report = EvalReport(records(2000, (100, 100)))
    rows = list(csv.DictReader(io.StringIO(report.to_csv())))
    assert [float(r["speedup"]) for r in rows if r["method"] == "hoc"] == [20.0, 20.0]
    assert report.aggregates()["hoc"]["speedup"] == 2000 / 100
    assert EvalReport(records(256, (256, 256))).aggregates()["hoc"]["speedup"] == 1.0


def test_agreement_with_exhaustive():
    agg = EvalReport(records()).aggregates()["hoc"]
    assert agg["top1_exhaustive"] == 0.5
    assert agg["top5_exhaustive"] == 1.0
    assert agg["top1_gt"] == 0.5


def test_csv_and_json_agree_exactly():
    report = EvalReport(records(2000, (100, 37)))
    doc = json.loads(report.to_json())
    summary = list(csv.DictReader(io.StringIO(report.summary_csv())))
    for row in summary:
        agg = doc["aggregates"][row["method"]]
        for key, value in row.items():
            if key != "method" and value != "":
                assert float(value) == agg[key]
    assert doc["version"] == 1


def test_wall_time_is_opt_in():
    report = EvalReport(records())
    assert "wall_time" not in report.to_csv()
    assert "wall_time" in EvalReport(records(), with_wall_time=True).to_csv()
