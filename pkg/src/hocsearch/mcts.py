"""HOC-Search (MCTS over the HOC-Tree), the exhaustive/greedy/NN baselines and
simultaneous pose refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import KdIndex, Pose, make_rng, surface_param
from .hoctree import HocNode, HocTree
from .objective import seed_key, target_descriptor
from .synth import ShapeDatabase, candidate_pose

ANGLES_4 = (0.0, 90.0, 180.0, 270.0)
ANGLES_8 = (0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0)


class SearchError(RuntimeError):
    pass


@dataclass
class SearchConfig:
    iterations: int = 800
    lambda_start: float = 20.0
    lambda_end: float = 1.0
    seed: int = 0
    refine: bool = False
    refine_steps_incremental: int = 150
    refine_steps_final: int = 800
    extra_45: bool = False
    score_mode: str = "raw"  # raw | minmax
    refine_trigger: str = "global"  # global | branch

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lambda_start >= self.lambda_end >= 0:
            raise ValueError("require lambda_start >= lambda_end >= 0")
        if self.score_mode not in ("raw", "minmax"):
            raise ValueError(f"unknown score mode {self.score_mode!r}")
        if self.refine_trigger not in ("global", "branch"):
            raise ValueError(f"unknown refine trigger {self.refine_trigger!r}")

    def lam(self, i: int) -> float:
        """Exploration weight at 1-based iteration ``i``."""
        frac = (i - 1) / max(self.iterations - 1, 1)
        if i == self.iterations > 1:
            return self.lambda_end  # exact endpoint, free of rounding
        return self.lambda_start + frac * (self.lambda_end - self.lambda_start)


class Evaluator:
    """Memoizing front for an objective; counts the objective calls it really makes."""

    def __init__(self, objective, db: ShapeDatabase):
        self.objective = objective
        self.db = db
        self.calls = 0
        self._cache: dict = {}

    def loss(self, shape_id: int, pose: Pose, key) -> float:
        ck = (shape_id, pose.scale, pose.rotation, pose.translation, tuple(key))
        hit = self._cache.get(ck)
        if hit is None:
            self.calls += 1
            hit = self._cache[ck] = float(self.objective(self.db[shape_id], pose, key))
        return hit

    def candidate(self, cand) -> float:
        return self.loss(cand.shape.shape_id, cand.pose, cand.seed_key)


def ucb(score: float, visits: int, parent_visits: int, lam: float) -> float:
    if visits < 1:
        raise ValueError("UCB is undefined for unvisited nodes")
    if parent_visits < visits:
        raise ValueError("parent visits must be >= child visits")
    return score + lam * math.sqrt(math.log(parent_visits) / visits)


@dataclass
class TraceRecord:
    iter: int
    leaf: int
    angle: float
    loss: float
    score: float
    best_so_far: float
    refined: bool

    def to_dict(self) -> dict:
        return {"iter": self.iter, "leaf": self.leaf, "angle": self.angle, "loss": self.loss,
                "score": self.score, "best_so_far": self.best_so_far, "refined": self.refined}


@dataclass
class SearchResult:
    best_shape: int
    best_angle: float
    pose: Pose
    best_score: float
    evaluations: int
    trace: list[TraceRecord] = field(default_factory=list)
    refined_pose: Pose | None = None
    refined_loss: float | None = None
    objective_calls: int = 0
    ranked: list[tuple[float, int, float]] = field(default_factory=list)

    @property
    def best_loss(self) -> float:
        return -self.best_score

    @property
    def final_pose(self) -> Pose:
        return self.refined_pose or self.pose

    @property
    def final_loss(self) -> float:
        return self.best_loss if self.refined_loss is None else self.refined_loss

    def ranked_shapes(self) -> list[int]:
        return unique_shapes(self.ranked) if self.ranked else [self.best_shape]

    def to_dict(self) -> dict:
        return {
            "best_shape": self.best_shape, "best_angle": self.best_angle, "pose": self.pose.to_dict(),
            "best_score": self.best_score, "evaluations": self.evaluations, "objective_calls": self.objective_calls,
            "refined_pose": self.refined_pose.to_dict() if self.refined_pose else None,
            "refined_loss": self.refined_loss,
            "ranked": [{"loss": l, "shape": s, "angle": a} for l, s, a in self.ranked],
        }


def unique_shapes(ranked) -> list[int]:
    seen, out = set(), []
    for _, shape, _ in ranked:
        if shape not in seen:
            seen.add(shape)
            out.append(shape)
    return out


# ---------------------------------------------------------------- refinement

@dataclass
class RefineResult:
    pose: Pose
    loss: float
    history: list[float]
    steps: int


def _pose_jacobian(pose: Pose, canon: np.ndarray) -> np.ndarray:
    """d(posed point)/d(scale, euler, translation), shape (n, 3, 9)."""
    rx, ry, rz = pose.rotation
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    d_x = np.array([[0, 0, 0], [0, -sx, -cx], [0, cx, -sx]])
    d_y = np.array([[-sy, 0, cy], [0, 0, 0], [-cy, 0, -sy]])
    d_z = np.array([[-sz, -cz, 0], [cz, -sz, 0], [0, 0, 0]])
    rot = rot_z @ rot_y @ rot_x
    scaled = canon * np.asarray(pose.scale)
    jac = np.empty((len(canon), 3, 9))
    jac[:, :, 0:3] = rot[None, :, :] * canon[:, None, :]
    jac[:, :, 3] = scaled @ (rot_z @ rot_y @ d_x).T
    jac[:, :, 4] = scaled @ (rot_z @ d_y @ rot_x).T
    jac[:, :, 5] = scaled @ (d_z @ rot_y @ rot_x).T
    jac[:, :, 6:9] = np.eye(3)[None, :, :]
    return jac


def refine_pose(shape, pose: Pose, scene, objective, steps: int, seed: int = 0, key=(0,),
                evaluator: Evaluator | None = None, surrogate_samples: int = 3000) -> RefineResult:
    """Local 9-DOF pose optimization.

    Proposals are damped Gauss-Newton steps on scan-to-model point distances
    with nearest-neighbour correspondences held fixed within a step; a step is
    taken only if the full objective decreases, halving it up to 6 times.
    Stops early once no step size gives a decrease.
    """
    def full(p):
        if evaluator is not None:
            return evaluator.loss(shape.shape_id, p, key)
        return float(objective(shape, p, key))

    loss = full(pose)
    history = [loss]
    if steps <= 0:
        return RefineResult(pose, loss, history, 0)
    target = scene.target_points
    param = surface_param(shape.mesh, surrogate_samples, make_rng(seed, shape.shape_id), scale=pose.scale)
    canon = param.points(shape.mesh)
    damping = 1e-3
    taken = 0
    for _ in range(steps):
        posed = (canon * np.asarray(pose.scale)) @ pose.matrix().T + np.asarray(pose.translation)
        dist, idx = KdIndex(posed).query(target)
        resid = (posed[idx] - target)
        cutoff = 2.5 * max(float(np.median(dist)), 1e-6)
        weight = np.where(dist <= cutoff, 1.0, cutoff / np.maximum(dist, 1e-12))
        jac = _pose_jacobian(pose, canon[idx])
        jw = jac * weight[:, None, None]
        hess = np.einsum("nij,nik->jk", jw, jac)
        grad = np.einsum("nij,ni->j", jw, resid)
        hess_d = hess + damping * np.diag(np.diag(hess)) + 1e-9 * np.eye(9)
        try:
            step = -np.linalg.solve(hess_d, grad)
        except np.linalg.LinAlgError:
            break
        vec = pose.as_vector()
        accepted = False
        alpha = 1.0
        for _ in range(7):
            trial = vec + alpha * step
            if np.all(trial[:3] > 1e-3) and np.all(np.isfinite(trial)):
                trial_pose = Pose.from_vector(trial)
                trial_loss = full(trial_pose)
                if trial_loss < loss:
                    pose, loss = trial_pose, trial_loss
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            break
        taken += 1
        history.append(loss)
    return RefineResult(pose, loss, history, taken)


# ---------------------------------------------------------------- HOC-Search

def _lam_scale(values_lo: float, values_hi: float, score: float, mode: str) -> float:
    if mode == "raw":
        return score
    if values_hi <= values_lo:
        return 1.0
    return (score - values_lo) / (values_hi - values_lo)


def _better(score, shape, angle, best):
    if best is None:
        return True
    b_score, b_shape, b_angle = best
    return score > b_score or (score == b_score and (shape, angle) < (b_shape, b_angle))


def hoc_search(tree: HocTree, db: ShapeDatabase, scene, objective, config: SearchConfig,
               evaluator: Evaluator | None = None) -> SearchResult:
    """Anytime MCTS over ``tree``; resets the tree statistics before starting."""
    evaluator = evaluator or Evaluator(objective, db)
    calls_before = evaluator.calls
    tree.reset_stats()
    rng = make_rng(config.seed, 101)
    slots: dict[int, Pose] = {p.index: candidate_pose(scene.box, p.angle) for p in tree.pose_nodes()}
    branch_best: dict[int, float] = {}
    trace: list[TraceRecord] = []
    best = None  # (score, shape, angle)
    best_pose = None
    lo, hi = math.inf, -math.inf
    evaluated: list[tuple[float, int, float]] = []

    for it in range(1, config.iterations + 1):
        if tree.root.locked:
            break
        lam = config.lam(it)
        node, path = tree.root, [tree.root]
        while not node.is_leaf:
            open_children = [c for c in node.children if not c.locked]
            unvisited = [c for c in open_children if c.visits == 0]
            if unvisited:
                node = unvisited[int(rng.integers(len(unvisited)))]
                path.append(node)
                while not node.is_leaf:
                    options = [c for c in node.children if not c.locked]
                    node = options[int(rng.integers(len(options)))]
                    path.append(node)
                break
            best_val, best_child = -math.inf, None
            for child in open_children:
                val = ucb(_lam_scale(lo, hi, child.score, config.score_mode), child.visits, node.visits, lam)
                if val > best_val:
                    best_val, best_child = val, child
            node = best_child
            path.append(node)

        leaf = node
        branch = leaf.pose_node
        angle = branch.angle
        pose = slots[branch.index]
        key = seed_key(leaf.shape_id, angle)
        try:
            loss = evaluator.loss(leaf.shape_id, pose, key)
            if config.extra_45:
                turned = pose.with_yaw(pose.yaw + math.pi / 4)
                key45 = seed_key(leaf.shape_id, angle + 45.0)
                loss45 = evaluator.loss(leaf.shape_id, turned, key45)
                if loss45 < loss:
                    loss, pose, key = loss45, turned, key45
        except Exception as exc:  # annotate with search context
            raise SearchError(f"objective failed at iteration {it}, leaf {leaf.shape_id} @ {angle:g} deg: {exc}") from exc
        score = -loss
        refined = False
        trigger = best is None or score > best[0]
        if config.refine_trigger == "branch":
            trigger = score > branch_best.get(branch.index, -math.inf)
        if config.refine and trigger:
            res = refine_pose(db[leaf.shape_id], pose, scene, objective, config.refine_steps_incremental,
                              seed=config.seed, key=key, evaluator=evaluator)
            if res.loss < loss:
                pose, score, refined = res.pose, -res.loss, True
            slots[branch.index] = res.pose
        branch_best[branch.index] = max(branch_best.get(branch.index, -math.inf), score)

        for n in path:
            n.visits += 1
            if score > n.score:
                n.score = score
        lo, hi = min(lo, score), max(hi, score)
        leaf.locked = True
        for n in reversed(path[:-1]):
            if all(c.locked for c in n.children):
                n.locked = True
            else:
                break
        if _better(score, leaf.shape_id, angle, best):
            best = (score, leaf.shape_id, angle)
            best_pose = pose
        evaluated.append((-score, leaf.shape_id, angle))
        trace.append(TraceRecord(it, leaf.shape_id, angle, loss, score, best[0], refined))

    score, shape_id, angle = best
    result = SearchResult(shape_id, angle, best_pose, score, len(trace), trace,
                          ranked=sorted(evaluated, key=lambda t: (t[0], t[1], t[2])))
    if config.refine and config.refine_steps_final > 0:
        res = refine_pose(db[shape_id], best_pose, scene, objective, config.refine_steps_final,
                          seed=config.seed + 1, key=seed_key(shape_id, angle), evaluator=evaluator)
        result.refined_pose, result.refined_loss = res.pose, res.loss
    result.objective_calls = evaluator.calls - calls_before
    return result


# ---------------------------------------------------------------- baselines

def exhaustive_search(db: ShapeDatabase, scene, objective, angles=ANGLES_4, shape_ids=None,
                      evaluator: Evaluator | None = None) -> list[tuple[float, int, float]]:
    """Every (shape, angle) pair once, sorted by (loss, shape id, angle)."""
    evaluator = evaluator or Evaluator(objective, db)
    ids = db.ids if shape_ids is None else list(shape_ids)
    ranked = []
    for sid in ids:
        for angle in angles:
            loss = evaluator.loss(sid, candidate_pose(scene.box, angle), seed_key(sid, angle))
            ranked.append((loss, sid, float(angle)))
    ranked.sort(key=lambda t: (t[0], t[1], t[2]))
    return ranked


def _as_result(ranked, evaluations, calls=0) -> SearchResult:
    loss, sid, angle = ranked[0]
    return SearchResult(sid, angle, None, -loss, evaluations, ranked=ranked, objective_calls=calls)


def exhaustive_result(db, scene, objective, angles=ANGLES_4, evaluator=None) -> SearchResult:
    evaluator = evaluator or Evaluator(objective, db)
    before = evaluator.calls
    ranked = exhaustive_search(db, scene, objective, angles, evaluator=evaluator)
    res = _as_result(ranked, len(ranked), evaluator.calls - before)
    res.pose = candidate_pose(scene.box, res.best_angle)
    return res


def greedy_search(tree: HocTree, db: ShapeDatabase, scene, objective, evaluator: Evaluator | None = None) -> SearchResult:
    """Per pose branch, descend into the child whose centroid model scores best."""
    evaluator = evaluator or Evaluator(objective, db)
    before = evaluator.calls
    seen: dict[tuple[int, float], float] = {}

    def score(shape_id, angle):
        k = (shape_id, angle)
        if k not in seen:
            seen[k] = evaluator.loss(shape_id, candidate_pose(scene.box, angle), seed_key(shape_id, angle))
        return seen[k]

    finals = []
    for branch in tree.pose_nodes():
        node: HocNode = branch
        while not node.is_leaf:
            losses = [score(c.centroid, branch.angle) for c in node.children]
            node = node.children[int(np.argmin(losses))]
        finals.append((score(node.shape_id, branch.angle), node.shape_id, branch.angle))
    finals.sort(key=lambda t: (t[0], t[1], t[2]))
    everything = sorted(((l, s, a) for (s, a), l in seen.items()), key=lambda t: (t[0], t[1], t[2]))
    res = _as_result(finals, len(seen), evaluator.calls - before)
    res.ranked = finals + [t for t in everything if t not in finals]
    res.pose = candidate_pose(scene.box, res.best_angle)
    return res


def descriptor_ranking(db: ShapeDatabase, scene, angles=ANGLES_4) -> list[tuple[float, int]]:
    """(descriptor distance, shape id) ascending; distance is the minimum over pose angles."""
    targets = np.stack([target_descriptor(scene, candidate_pose(scene.box, a)) for a in angles])
    mat = db.descriptor_matrix()
    dist = np.linalg.norm(mat[:, None, :] - targets[None, :, :], axis=2).min(axis=1)
    return sorted(zip(dist.tolist(), db.ids))


def nn_rerank(db: ShapeDatabase, scene, objective, n: int, angles=ANGLES_4,
              evaluator: Evaluator | None = None) -> SearchResult:
    """Top-``n`` shapes by descriptor distance, re-ranked with the expensive objective."""
    evaluator = evaluator or Evaluator(objective, db)
    before = evaluator.calls
    n = max(1, min(n, len(db)))
    shortlist = [sid for _, sid in descriptor_ranking(db, scene, angles)[:n]]
    ranked = exhaustive_search(db, scene, objective, angles, shape_ids=shortlist, evaluator=evaluator)
    res = _as_result(ranked, len(ranked), evaluator.calls - before)
    res.pose = candidate_pose(scene.box, res.best_angle)
    return res


def yaw_error_deg(a: float, b: float, period: float = 360.0) -> float:
    d = (math.degrees(a - b)) % period
    return min(d, period - d)


__all__ = [
    "SearchConfig", "SearchResult", "Evaluator", "ucb", "hoc_search", "exhaustive_search", "exhaustive_result",
    "greedy_search", "nn_rerank", "refine_pose", "RefineResult", "descriptor_ranking", "yaw_error_deg",
]
