"""Top-k agreement with exhaustive search versus iteration budget, for several
UCB score/exploration settings, plus the greedy and NN re-ranking baselines.

    python3 scripts/search_efficiency.py --shapes 500 --scenes 50 --budgets 50,100,200
"""

import argparse
import time

from hocsearch.cli import scene_specs
from hocsearch.hoctree import build_tree
from hocsearch.mcts import (Evaluator, SearchConfig, exhaustive_search, greedy_search, hoc_search, nn_rerank,
                            unique_shapes)
from hocsearch.objective import make_objective
from hocsearch.synth import gen_database, gen_scene

SETTINGS = {
    "raw-20": dict(score_mode="raw", lambda_start=20.0, lambda_end=1.0),
    "minmax-20": dict(score_mode="minmax", lambda_start=20.0, lambda_end=1.0),
    "minmax-2": dict(score_mode="minmax", lambda_start=2.0, lambda_end=0.1),
    "minmax-1": dict(score_mode="minmax", lambda_start=1.0, lambda_end=0.05),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--shapes", type=int, default=500)
    ap.add_argument("--scenes", type=int, default=50)
    ap.add_argument("--budgets", default="50,100,200")
    ap.add_argument("--settings", default=",".join(SETTINGS))
    ap.add_argument("--nn", type=int, default=25, help="NN shortlist size (4 evaluations each)")
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()
    budgets = [int(b) for b in args.budgets.split(",")]
    names = args.settings.split(",")

    db = gen_database(count=args.shapes, seed=1)
    tree = build_tree(db, seed=0)
    print(f"leaves={tree.leaf_count()} cluster depth={tree.cluster_depth()}")
    specs = scene_specs(db, args.scenes, args.seed, sigma=0.01, occluders=0.2, dropout=0.2)
    hits = {(n, b): [0, 0] for n in names for b in budgets}
    base = {"greedy": 0, "nn-rerank": 0}
    start = time.time()
    for q, spec in enumerate(specs):
        scene = gen_scene(db, spec, f"q{q}")
        obj = make_objective("rac", scene)
        ev = Evaluator(obj, db)
        top = unique_shapes(exhaustive_search(db, scene, obj, evaluator=ev))
        for n in names:
            for b in budgets:
                res = hoc_search(tree, db, scene, obj, SearchConfig(iterations=b, seed=q, **SETTINGS[n]), evaluator=ev)
                hits[n, b][0] += res.best_shape == top[0]
                hits[n, b][1] += res.best_shape in top[:5]
        base["greedy"] += greedy_search(tree, db, scene, obj, evaluator=ev).best_shape == top[0]
        base["nn-rerank"] += nn_rerank(db, scene, obj, args.nn, evaluator=ev).best_shape == top[0]
        print(f"query {q + 1}/{len(specs)}  {time.time() - start:.0f}s", flush=True)

    n_q = len(specs)
    print("setting      " + "  ".join(f"top1@{b:<4d} top5@{b:<4d}" for b in budgets))
    for n in names:
        cells = "  ".join(f"{hits[n, b][0] / n_q:<9.2f} {hits[n, b][1] / n_q:<9.2f}" for b in budgets)
        print(f"{n:<12} {cells}")
    for k, v in base.items():
        print(f"{k:<12} top1 {v / n_q:.2f}")


if __name__ == "__main__":
    main()
