"""Candidate scoring: render-and-compare, chamfer, MSCD and descriptor distance.

All objectives are callables ``objective(record, pose, seed_key) -> loss``;
``seed_key`` fixes the surface samples drawn for the candidate so repeated
evaluations are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, chamfer, sample_posed, single_direction_chamfer
from .render import CameraRig
from .shapedesc import descriptor

CD_SAMPLES = 10_000
UNIT_BOUNDS = (np.full(3, -0.5), np.full(3, 0.5))


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_m: float = 0.6
    lambda_s: float = 1.0
    lambda_sil: float = 0.5
    lambda_cd: float = 2.0

    def __post_init__(self):
        if min(self.lambda_m, self.lambda_s, self.lambda_sil, self.lambda_cd) < 0:
            raise ValueError("objective weights must be >= 0")


@dataclass(frozen=True)
class Candidate:
    shape: object  # ShapeRecord
    pose: Pose
    seed_key: tuple = (0,)


def seed_key(shape_id: int, angle_deg: float) -> tuple[int, int]:
    """Sampling key for a (shape, pose node) pair; independent of evaluation order."""
    return (int(shape_id), int(round(angle_deg * 1000)) % 360_000)


class FrameStack:
    """Per-frame rasters stacked along axis 0; invalid depth is +inf."""

    def __init__(self, rig, background, scan, sensor, target_mask):
        self.rig = rig
        self.background = background
        self.scan = scan
        self.sensor = sensor
        self.scan_valid = np.isfinite(scan)
        self.sensor_valid = np.isfinite(sensor)
        self.target_mask = target_mask
        self.far = np.array([c.far for c in rig.cameras], dtype=np.float32)[:, None, None]
        self.scan_count = self.scan_valid.sum(axis=(1, 2))
        self.sensor_count = self.sensor_valid.sum(axis=(1, 2))
        self.target_count = target_mask.sum(axis=(1, 2))

    @classmethod
    def from_frames(cls, frames) -> "FrameStack":
        if not frames:
            raise ValueError("scene has no frames")

        def stack(attr):
            arr = np.stack([getattr(f, attr).depth for f in frames]).astype(np.float32)
            arr[np.isnan(arr)] = np.inf
            return arr

        return cls(
            CameraRig([f.camera for f in frames]),
            stack("background_depth"),
            stack("scan_depth_with_target"),
            stack("sensor_depth"),
            np.stack([f.target_mask.bits for f in frames]),
        )

    def render(self, mesh, pose: Pose) -> np.ndarray:
        return self.rig.render(mesh, pose).astype(np.float32)


def _masked_l1(cad, ref, valid, count):
    total = np.where(valid, np.abs(cad - ref), 0.0).sum(axis=(1, 2), dtype=np.float64)
    return np.divide(total, count, out=np.zeros(len(count)), where=count > 0)


def depth_term(d_cad, stack: FrameStack, weights: ObjectiveWeights) -> float:
    """Mean over frames of the validity-normalized L1 depth residuals."""
    term_m = _masked_l1(d_cad, stack.scan, stack.scan_valid, stack.scan_count)
    term_s = _masked_l1(d_cad, stack.sensor, stack.sensor_valid, stack.sensor_count)
    return float(np.mean(weights.lambda_m * term_m + weights.lambda_s * term_s))


def silhouette_term(cand_mask, stack: FrameStack) -> float:
    used = stack.target_count > 0
    if not used.any():
        raise ValueError("no target silhouette")
    inter = (cand_mask & stack.target_mask).sum(axis=(1, 2))
    union = (cand_mask | stack.target_mask).sum(axis=(1, 2))
    iou = inter[used] / union[used]
    return float(np.mean(1.0 - iou))


class Objective:
    name = "objective"

    def __init__(self, scene):
        self.scene = scene

    def __call__(self, shape, pose: Pose, key=(0,)) -> float:
        raise NotImplementedError

    def candidate_loss(self, cand: Candidate) -> float:
        return self(cand.shape, cand.pose, cand.seed_key)


class _TargetCloud(Objective):
    def __init__(self, scene):
        super().__init__(scene)
        if len(scene.target_points) == 0:
            raise ValueError("empty target point cloud")


class SingleDirectionChamfer(_TargetCloud):
    """Scan-to-model chamfer (MSCD); robust to incomplete scans."""

    name = "mscd"

    def __call__(self, shape, pose, key=(0,)):
        samples = sample_posed(shape.mesh, pose, CD_SAMPLES, key)
        return single_direction_chamfer(self.scene.target_points, samples)


class ChamferObjective(_TargetCloud):
    name = "cd"

    def __call__(self, shape, pose, key=(0,)):
        samples = sample_posed(shape.mesh, pose, CD_SAMPLES, key)
        return chamfer(self.scene.target_points, samples)


def target_descriptor(scene, pose: Pose) -> np.ndarray:
    """Descriptor of the scan expressed in the candidate's unit-cube frame."""
    rot = pose.matrix()
    local = ((scene.target_points - np.asarray(pose.translation)) @ rot) / np.asarray(pose.scale)
    return descriptor(local, UNIT_BOUNDS)


class EmbeddingObjective(_TargetCloud):
    name = "embed"

    def __call__(self, shape, pose, key=(0,)):
        return float(np.linalg.norm(target_descriptor(self.scene, pose) - shape.descriptor))


class RenderAndCompare(_TargetCloud):
    """Depth + silhouette + single-direction chamfer, with the candidate
    substituted into the pre-rendered static background."""

    name = "rac"

    def __init__(self, scene, weights: ObjectiveWeights | None = None):
        super().__init__(scene)
        self.weights = weights or ObjectiveWeights()
        self.stack = scene.stack()

    def components(self, shape, pose, key=(0,)) -> tuple[float, float, float]:
        cand = self.stack.render(shape.mesh, pose)
        d_cad = np.minimum(self.stack.background, cand)
        d_cad = np.where(np.isfinite(d_cad), d_cad, self.stack.far)
        wins = np.isfinite(cand) & (cand <= self.stack.background)
        l_dpt = depth_term(d_cad, self.stack, self.weights)
        l_sil = silhouette_term(wins, self.stack)
        samples = sample_posed(shape.mesh, pose, CD_SAMPLES, key)
        l_cd = single_direction_chamfer(self.scene.target_points, samples)
        return l_dpt, l_sil, l_cd

    def combine(self, l_dpt, l_sil, l_cd) -> float:
        return l_dpt + self.weights.lambda_sil * l_sil + self.weights.lambda_cd * l_cd

    def __call__(self, shape, pose, key=(0,)):
        return self.combine(*self.components(shape, pose, key))


OBJECTIVES = {"rac": RenderAndCompare, "cd": ChamferObjective, "mscd": SingleDirectionChamfer, "embed": EmbeddingObjective}


def make_objective(name: str, scene, weights: ObjectiveWeights | None = None) -> Objective:
    if name not in OBJECTIVES:
        raise ValueError(f"unknown objective {name!r}; choose from {', '.join(OBJECTIVES)}")
    if name == "rac":
        return RenderAndCompare(scene, weights)
    return OBJECTIVES[name](scene)


# Thin wrappers matching the operation names used in docs and tests.

def loss_depth(cand: Candidate, scene, weights: ObjectiveWeights | None = None) -> float:
    weights = weights or ObjectiveWeights()
    if not scene.frames:
        raise ValueError("scene has no frames")
    stack = scene.stack()
    rendered = stack.render(cand.shape.mesh, cand.pose)
    d_cad = np.minimum(stack.background, rendered)
    return depth_term(np.where(np.isfinite(d_cad), d_cad, stack.far), stack, weights)


def loss_silhouette(cand: Candidate, scene) -> float:
    stack = scene.stack()
    rendered = stack.render(cand.shape.mesh, cand.pose)
    return silhouette_term(np.isfinite(rendered) & (rendered <= stack.background), stack)


def loss_cd(cand: Candidate, scene) -> float:
    return SingleDirectionChamfer(scene)(cand.shape, cand.pose, cand.seed_key)


def loss_rac(cand: Candidate, scene, weights: ObjectiveWeights | None = None) -> float:
    return RenderAndCompare(scene, weights).candidate_loss(cand)


def loss_embedding(shape, scene, pose: Pose | None = None) -> float:
    pose = pose or scene.box.pose()
    return EmbeddingObjective(scene)(shape, pose)
