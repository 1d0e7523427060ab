"""Retrieval metrics and the benchmark report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import DEFAULT_DENSITY, OrientedBox, Pose, TriangleMesh, chamfer, make_rng, sample_count, surface_param

REPORT_VERSION = 1


def topk_ra(queries, retrieved_topk, reference, k: int | None = None) -> float:
    """Fraction of ``queries`` whose reference id appears in its retrieved list.

    ``retrieved_topk`` and ``reference`` are mappings keyed by query; lists
    are truncated to ``k`` entries when ``k`` is given.
    """
    queries = list(queries)
    if not queries:
        raise ValueError("topk_ra needs at least one query")
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    missing = [q for q in queries if q not in reference]
    if missing:
        raise ValueError(f"queries without a reference: {missing}")
    hits = 0
    for q in queries:
        ranked = list(retrieved_topk.get(q, []))
        if k is not None:
            ranked = ranked[:k]
        hits += reference[q] in ranked
    return hits / len(queries)


@dataclass(frozen=True)
class Placement:
    """A mesh in the scene; ``box`` fixes the sample count for chamfer scoring."""

    mesh: TriangleMesh
    pose: Pose
    box: OrientedBox | None = None


def placement_chamfer(a: Placement, b: Placement, box: OrientedBox, m: float = DEFAULT_DENSITY,
                      seed: int = 0) -> float:
    n = sample_count(box, m)
    pa = surface_param(a.mesh, n, make_rng(seed, 1), scale=a.pose.scale).points(a.mesh, a.pose)
    pb = surface_param(b.mesh, n, make_rng(seed, 2), scale=b.pose.scale).points(b.mesh, b.pose)
    return chamfer(pa, pb)


def mean_chamfer_report(results, ground_truth, m: float = DEFAULT_DENSITY, seed: int = 0) -> float:
    """Mean chamfer distance between retrieved and ground-truth placements.

    Both arguments map query id to :class:`Placement`; the ground-truth box
    sets the number of samples drawn from each surface.
    """
    results = dict(results)
    if not results:
        raise ValueError("no results to score")
    missing = sorted((q for q in results if q not in ground_truth), key=str)
    if missing:
        raise ValueError(f"missing ground truth for queries: {missing}")
    dists = []
    for i, q in enumerate(sorted(results, key=str)):
        gt = ground_truth[q]
        box = gt.box if gt.box is not None else OrientedBox(gt.pose.translation, gt.pose.scale, gt.pose.yaw)
        dists.append(placement_chamfer(results[q], gt, box, m, seed + i))
    return float(np.mean(dists))


@dataclass
class QueryRecord:
    query: str
    method: str
    best_shape: int
    best_angle: float
    loss: float
    evaluations: int
    exhaustive_evaluations: int
    gt_shape: int
    chamfer_gt: float
    ranked_shapes: list[int] = field(default_factory=list)
    wall_time: float | None = None

    @property
    def speedup(self) -> float:
        return self.exhaustive_evaluations / self.evaluations


CSV_COLUMNS = ["query", "method", "best_shape", "best_angle", "loss", "evaluations", "exhaustive_evaluations",
               "speedup", "gt_shape", "chamfer_gt"]
SUMMARY_COLUMNS = ["method", "queries", "mean_evaluations", "speedup", "mean_chamfer_gt", "mean_loss"]


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


class EvalReport:
    """Per-query records plus per-method aggregates.

    Agreement columns compare each method with the exhaustive ranking of the
    same query: a hit at k means the method's best shape is among the k best
    distinct shapes found by exhaustive search.
    """

    def __init__(self, records: list[QueryRecord], ks=(1, 5), with_wall_time: bool = False):
        self.records = sorted(records, key=lambda r: (r.query, r.method))
        self.ks = tuple(ks)
        self.with_wall_time = with_wall_time

    def methods(self) -> list[str]:
        return sorted({r.method for r in self.records})

    def _exhaustive_lists(self) -> dict[str, list[int]]:
        return {r.query: r.ranked_shapes for r in self.records if r.method == "exhaustive"}

    def aggregates(self) -> dict[str, dict]:
        ex_lists = self._exhaustive_lists()
        out = {}
        for method in self.methods():
            recs = [r for r in self.records if r.method == method]
            agg = {
                "queries": len(recs),
                "mean_evaluations": float(np.mean([r.evaluations for r in recs])),
                "speedup": sum(r.exhaustive_evaluations for r in recs) / sum(r.evaluations for r in recs),
                "mean_chamfer_gt": float(np.mean([r.chamfer_gt for r in recs])),
                "mean_loss": float(np.mean([r.loss for r in recs])),
            }
            queries = [r.query for r in recs]
            gt_ref = {r.query: r.gt_shape for r in recs}
            own = {r.query: r.ranked_shapes or [r.best_shape] for r in recs}
            for k in self.ks:
                agg[f"top{k}_gt"] = topk_ra(queries, own, gt_ref, k)
                if all(q in ex_lists for q in queries):
                    best = {r.query: r.best_shape for r in recs}
                    agg[f"top{k}_exhaustive"] = topk_ra(queries, ex_lists, best, k)
            out[method] = agg
        return out

    def summary_columns(self) -> list[str]:
        cols = list(SUMMARY_COLUMNS)
        for k in self.ks:
            cols.append(f"top{k}_gt")
        for k in self.ks:
            cols.append(f"top{k}_exhaustive")
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = CSV_COLUMNS + (["wall_time"] if self.with_wall_time else [])
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for r in self.records:
            row = {**asdict(r), "speedup": r.speedup}
            writer.writerow([_fmt(row[c]) for c in cols])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        cols = self.summary_columns()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for method, agg in self.aggregates().items():
            row = {"method": method, **agg}
            writer.writerow([_fmt(row[c]) if c in row else "" for c in cols])
        return buf.getvalue()

    def to_json(self) -> str:
        records = []
        for r in self.records:
            rec = {**asdict(r), "speedup": r.speedup}
            if not self.with_wall_time:
                rec.pop("wall_time")
            records.append(rec)
        doc = {"version": REPORT_VERSION, "ks": list(self.ks), "records": records, "aggregates": self.aggregates()}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"
