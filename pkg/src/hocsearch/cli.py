"""Command-line entry point: data generation, tree building, search, baselines and reports."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .geometry import make_rng
from .hoctree import TreeFormatError, build_tree, load_tree, save_tree
from .mcts import (ANGLES_4, ANGLES_8, Evaluator, SearchConfig, SearchError, SearchResult, exhaustive_result,
                   greedy_search, hoc_search, nn_rerank, unique_shapes)
from .metrics import EvalReport, Placement, QueryRecord, placement_chamfer, topk_ra
from .objective import OBJECTIVES, make_objective
from .synth import FAMILIES, SceneSpec, ShapeDatabase, gen_database, gen_scene, load_scene, save_scene

RESULT_VERSION = 1
METHODS = ("hoc", "exhaustive", "greedy", "nn-rerank")


class CliError(Exception):
    pass


def _csv_list(text: str, cast=str) -> list:
    try:
        return [cast(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _floats(text):
    return _csv_list(text, float)


def _ints(text):
    return _csv_list(text, int)


def _write_json(path, doc) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return json.loads(path.read_text())


# ---------------------------------------------------------------- config

def search_config(args) -> SearchConfig:
    """Defaults < ``--config`` file < explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(_read_json(args.config))
        unknown = set(values) - {f.name for f in fields(SearchConfig)}
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
    flag_map = {"iters": "iterations", "seed": "seed", "refine": "refine", "extra_45": "extra_45",
                "score_mode": "score_mode", "lambda_start": "lambda_start", "lambda_end": "lambda_end",
                "refine_trigger": "refine_trigger", "refine_steps": "refine_steps_incremental",
                "final_refine_steps": "refine_steps_final"}
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None and value is not False:
            values[key] = value
    return SearchConfig(**values)


def _add_search_flags(p, with_iters=True):
    if with_iters:
        p.add_argument("--iters", type=int, default=None, help="search iterations (default 800)")
    p.add_argument("--refine", action="store_true", default=None)
    p.add_argument("--extra-45", dest="extra_45", action="store_true", default=None,
                   help="also try each evaluated model turned by 45 degrees")
    p.add_argument("--score-mode", choices=("raw", "minmax"), default=None)
    p.add_argument("--lambda-start", type=float, default=None)
    p.add_argument("--lambda-end", type=float, default=None)
    p.add_argument("--refine-trigger", choices=("global", "branch"), default=None)
    p.add_argument("--refine-steps", type=int, default=None)
    p.add_argument("--final-refine-steps", type=int, default=None)
    p.add_argument("--config", help="JSON file with search config fields")


# ---------------------------------------------------------------- shared pieces

def _db_for_tree(tree, tree_path, db_arg):
    if db_arg:
        return ShapeDatabase.load(db_arg)
    if tree.db_path is None:
        raise CliError("tree file names no database; pass --db")
    return ShapeDatabase.load(Path(tree_path).parent / tree.db_path)


def chamfer_to_gt(db, scene, shape_id: int, pose) -> float:
    if scene.gt_shape is None:
        return float("nan")
    gt = Placement(db[scene.gt_shape].mesh, scene.gt_pose)
    return placement_chamfer(Placement(db[shape_id].mesh, pose), gt, scene.gt_box or scene.box)


def result_doc(method: str, scene, objective: str, res: SearchResult, db, config: SearchConfig | None = None,
               ranked_limit: int | None = None) -> dict:
    ranked = res.ranked if ranked_limit is None else res.ranked[:ranked_limit]
    return {
        "version": RESULT_VERSION, "kind": "result", "method": method, "scene": scene.name,
        "objective": objective, "gt_shape": scene.gt_shape,
        "best_shape": res.best_shape, "best_angle": res.best_angle, "loss": res.best_loss,
        "final_loss": res.final_loss, "evaluations": res.evaluations, "objective_calls": res.objective_calls,
        "pose": res.pose.to_dict() if res.pose else None,
        "refined_pose": res.refined_pose.to_dict() if res.refined_pose else None,
        "chamfer_gt": chamfer_to_gt(db, scene, res.best_shape, res.final_pose),
        "ranked": [{"loss": l, "shape": s, "angle": a} for l, s, a in ranked],
        "config": asdict(config) if config else None,
    }


def run_method(method, db, tree, scene, objective, config: SearchConfig, n: int, angles, evaluator) -> SearchResult:
    if method == "hoc":
        return hoc_search(tree, db, scene, objective, config, evaluator=evaluator)
    if method == "exhaustive":
        return exhaustive_result(db, scene, objective, angles, evaluator=evaluator)
    if method == "greedy":
        return greedy_search(tree, db, scene, objective, evaluator=evaluator)
    if method == "nn-rerank":
        return nn_rerank(db, scene, objective, n, tree.pose_angles if tree else angles, evaluator=evaluator)
    raise CliError(f"unknown method {method!r}")


# ---------------------------------------------------------------- commands

def cmd_gen_db(args):
    unknown = set(args.families) - set(FAMILIES)
    if unknown:
        raise CliError(f"unknown families {sorted(unknown)}; choose from {', '.join(FAMILIES)}")
    gen_database(args.families, args.count, args.seed).save(args.out)


def scene_specs(db, count, seed, **kw) -> list[SceneSpec]:
    rng = make_rng(seed, 3)
    ids = db.ids
    if count <= len(ids):
        gts = rng.choice(len(ids), count, replace=False)
    else:
        gts = rng.integers(len(ids), size=count)
    return [SceneSpec(gt_shape=ids[int(g)], seed=seed * 100_003 + i, **kw) for i, g in enumerate(gts)]


def cmd_gen_scenes(args):
    db = ShapeDatabase.load(args.db)
    specs = scene_specs(db, args.count, args.seed, frames=args.frames, sigma=args.sigma, dropout=args.dropout,
                        occluders=args.occluders, box_yaw_max=args.box_yaw_max, box_trans_frac=args.box_trans,
                        box_scale_frac=args.box_scale, axis_aligned=args.axis_aligned)
    out = Path(args.out)
    for i, spec in enumerate(specs):
        name = f"scene_{i:03d}"
        save_scene(gen_scene(db, spec, name), out / name)


def cmd_build_tree(args):
    db = ShapeDatabase.load(args.db)
    tree = build_tree(db, args.pose_angles, args.categories, args.k, args.seed)
    out = Path(args.out)
    tree.db_path = os.path.relpath(Path(args.db).resolve(), out.resolve().parent)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tree(tree, out)


def cmd_search(args):
    tree = load_tree(args.tree)
    db = _db_for_tree(tree, args.tree, args.db)
    scene = load_scene(args.scene)
    config = search_config(args)
    objective = make_objective(args.objective, scene)
    res = hoc_search(tree, db, scene, objective, config)
    out = Path(args.out)
    _write_json(out, result_doc("hoc", scene, args.objective, res, db, config))
    trace = "".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in res.trace)
    out.with_name(out.stem + ".trace.jsonl").write_text(trace)


def cmd_exhaustive(args):
    db = ShapeDatabase.load(args.db)
    scene = load_scene(args.scene)
    angles = ANGLES_8 if args.angles == 8 else ANGLES_4
    res = exhaustive_result(db, scene, make_objective(args.objective, scene), angles)
    _write_json(args.out, result_doc("exhaustive", scene, args.objective, res, db))


def cmd_baseline(args):
    tree = load_tree(args.tree) if args.tree else None
    if args.method == "greedy" and tree is None:
        raise CliError("greedy needs --tree")
    db = ShapeDatabase.load(args.db) if args.db else _db_for_tree(tree, args.tree, None)
    scene = load_scene(args.scene)
    objective = make_objective(args.objective, scene)
    res = run_method(args.method, db, tree, scene, objective, SearchConfig(), args.n, ANGLES_4,
                     Evaluator(objective, db))
    _write_json(args.out, result_doc(args.method, scene, args.objective, res, db))


_BENCH_STATE = {}


def _bench_init(db_dir, tree_path):
    tree = load_tree(tree_path)
    _BENCH_STATE["tree"] = tree
    _BENCH_STATE["db"] = _db_for_tree(tree, tree_path, db_dir)


def _bench_query(job):
    scene_dir, methods, objective_name, config, n, ex_angles, results_dir = job
    db, tree = _BENCH_STATE["db"], _BENCH_STATE["tree"]
    scene = load_scene(scene_dir)
    objective = make_objective(objective_name, scene)
    evaluator = Evaluator(objective, db)
    ex = exhaustive_result(db, scene, objective, ex_angles, evaluator=evaluator)
    records = []
    for method in methods:
        start = time.perf_counter()
        res = ex if method == "exhaustive" else run_method(method, db, tree, scene, objective, config, n,
                                                           ex_angles, evaluator)
        wall = time.perf_counter() - start
        doc = result_doc(method, scene, objective_name, res, db, config if method == "hoc" else None)
        if results_dir:
            _write_json(Path(results_dir) / scene.name / f"{method}.json", doc)
        records.append(QueryRecord(scene.name, method, res.best_shape, res.best_angle, res.final_loss,
                                   res.evaluations, ex.evaluations, scene.gt_shape, doc["chamfer_gt"],
                                   res.ranked_shapes()[:10], wall))
    return records


def cmd_bench(args):
    scenes = sorted(p for p in Path(args.scenes).iterdir() if (p / "scene.json").exists()) \
        if Path(args.scenes).is_dir() else []
    if not scenes:
        raise CliError(f"no scenes found under {args.scenes}")
    methods = list(dict.fromkeys(args.methods + ["exhaustive"]))
    bad = set(methods) - set(METHODS)
    if bad:
        raise CliError(f"unknown methods {sorted(bad)}; choose from {', '.join(METHODS)}")
    config = search_config(args)
    out = Path(args.out)
    results_dir = args.results_dir or str(out.with_name(out.stem + "_results"))
    ex_angles = ANGLES_8 if args.angles == 8 else ANGLES_4
    jobs = [(str(s), methods, args.objective, config, args.n, ex_angles, results_dir) for s in scenes]
    if args.workers > 1:
        import multiprocessing
        with multiprocessing.get_context("fork").Pool(args.workers, _bench_init, (args.db, args.tree)) as pool:
            batches = pool.map(_bench_query, jobs)
    else:
        _bench_init(args.db, args.tree)
        batches = [_bench_query(j) for j in jobs]
    report = EvalReport([r for batch in batches for r in batch], with_wall_time=args.wall_time)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_csv())
    out.with_name(out.stem + ".summary.csv").write_text(report.summary_csv())
    out.with_suffix(".json").write_text(report.to_json())


def load_results(results_dir) -> list[dict]:
    root = Path(results_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"no such results directory: {root}")
    docs = []
    for path in sorted(root.rglob("*.json")):
        doc = json.loads(path.read_text())
        if isinstance(doc, dict) and doc.get("kind") == "result":
            docs.append(doc)
    if not docs:
        raise CliError(f"no result files under {root}")
    return docs


def evaluate_results(docs, reference: str, ks) -> dict:
    exhaustive = {d["scene"]: unique_shapes((r["loss"], r["shape"], r["angle"]) for r in d["ranked"])
                  for d in docs if d["method"] == "exhaustive"}
    methods = sorted({d["method"] for d in docs})
    out = {}
    for method in methods:
        mine = [d for d in docs if d["method"] == method]
        queries = [d["scene"] for d in mine]
        scores = {"queries": len(queries)}
        for k in ks:
            if reference == "exhaustive":
                missing = [q for q in queries if q not in exhaustive]
                if missing:
                    raise CliError(f"no exhaustive result for scenes {missing}")
                best = {d["scene"]: d["best_shape"] for d in mine}
                scores[f"top{k}"] = topk_ra(queries, exhaustive, best, k)
            else:
                missing = [q for q, d in zip(queries, mine) if d.get("gt_shape") is None]
                if missing:
                    raise CliError(f"no ground truth for scenes {missing}")
                own = {d["scene"]: unique_shapes((r["loss"], r["shape"], r["angle"]) for r in d["ranked"])
                       or [d["best_shape"]] for d in mine}
                gt = {d["scene"]: d["gt_shape"] for d in mine}
                scores[f"top{k}"] = topk_ra(queries, own, gt, k)
        scores["mean_evaluations"] = sum(d["evaluations"] for d in mine) / len(mine)
        scores["mean_chamfer_gt"] = sum(d["chamfer_gt"] for d in mine) / len(mine)
        out[method] = scores
    return out


def cmd_eval(args):
    docs = load_results(args.results)
    metrics = evaluate_results(docs, args.reference, args.k)
    _write_json(args.out, {"version": RESULT_VERSION, "reference": args.reference, "ks": args.k, "methods": metrics})


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hocsearch", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-db", help="generate a synthetic shape database")
    p.add_argument("--families", type=_csv_list, default=list(FAMILIES))
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_db)

    p = sub.add_parser("gen-scenes", help="render synthetic scan scenes")
    p.add_argument("--db", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--occluders", type=float, default=0.0)
    p.add_argument("--frames", type=int, default=14)
    p.add_argument("--box-yaw-max", type=float, default=0.0, help="radians")
    p.add_argument("--box-trans", type=float, default=0.0, help="fraction of the extents")
    p.add_argument("--box-scale", type=float, default=0.0, help="fraction of the extents")
    p.add_argument("--axis-aligned", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("build-tree", help="cluster a database into a search tree")
    p.add_argument("--db", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--pose-angles", type=_floats, default=list(ANGLES_4))
    p.add_argument("--categories", action="store_true", help="add a category level above the pose nodes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_tree)

    p = sub.add_parser("search", help="run the tree search on one scene")
    p.add_argument("--tree", required=True)
    p.add_argument("--db", help="override the database named in the tree file")
    p.add_argument("--scene", required=True)
    p.add_argument("--objective", choices=sorted(OBJECTIVES), default="rac")
    _add_search_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("exhaustive", help="score every (shape, angle) pair")
    p.add_argument("--db", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--objective", choices=sorted(OBJECTIVES), default="rac")
    p.add_argument("--angles", type=int, choices=(4, 8), default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_exhaustive)

    p = sub.add_parser("baseline", help="greedy tree descent or descriptor NN + re-ranking")
    p.add_argument("--method", choices=("greedy", "nn-rerank"), required=True)
    p.add_argument("--n", type=int, default=25, help="shortlist size for nn-rerank")
    p.add_argument("--tree")
    p.add_argument("--db")
    p.add_argument("--scene", required=True)
    p.add_argument("--objective", choices=sorted(OBJECTIVES), default="rac")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("bench", help="run several methods over a scene directory")
    p.add_argument("--scenes", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--db")
    p.add_argument("--methods", type=_csv_list, default=["hoc", "greedy", "nn-rerank"])
    p.add_argument("--objective", choices=sorted(OBJECTIVES), default="rac")
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--angles", type=int, choices=(4, 8), default=4, help="exhaustive pose angles")
    _add_search_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--wall-time", action="store_true", help="add a wall-clock column (not reproducible)")
    p.add_argument("--results-dir", help="per-query result files (default: next to the report)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="Top-k agreement of saved results")
    p.add_argument("--results", required=True)
    p.add_argument("--reference", choices=("exhaustive", "gt"), default="exhaustive")
    p.add_argument("--k", type=_ints, default=[1, 5])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (CliError, FileNotFoundError, ValueError, KeyError, TreeFormatError, SearchError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, FileNotFoundError) and exc.filename:
            msg = f"no such file: {exc.filename}"
        print(f"hocsearch {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
