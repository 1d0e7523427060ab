"""Deterministic synthetic shape databases, RGB-D-like scenes and noisy box proposals.

Every shape is stored normalized to the unit cube ``[-0.5, 0.5]^3`` so that a
box proposal maps onto a candidate pose without per-shape bookkeeping.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .geometry import (
    OrientedBox,
    Pose,
    TriangleMesh,
    as_cloud,
    make_rng,
    merge_meshes,
    surface_param,
)
from .render import Camera, CameraRig, DepthMap, Mask
from .shapedesc import descriptor

FAMILIES = ("box", "cylinder", "table", "chair", "shelf")
DESCRIPTOR_SAMPLES = 4096
UNIT_BOUNDS = (np.full(3, -0.5), np.full(3, 0.5))


# ---------------------------------------------------------------- primitives

_BOX_TRIS = np.array([
    [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
    [0, 1, 5], [0, 5, 4], [2, 3, 7], [2, 7, 6],
    [1, 2, 6], [1, 6, 5], [0, 4, 7], [0, 7, 3],
])


def cuboid(lo, hi) -> TriangleMesh:
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    verts = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ], dtype=np.float64)
    return TriangleMesh(verts, _BOX_TRIS)


def frustum(r_bottom: float, r_top: float, z0: float, z1: float, segments: int = 16) -> TriangleMesh:
    ang = np.arange(segments) * (2 * np.pi / segments)
    ring = np.column_stack([np.cos(ang), np.sin(ang)])
    bottom = np.column_stack([ring * r_bottom, np.full(segments, z0)])
    top = np.column_stack([ring * r_top, np.full(segments, z1)])
    verts = np.vstack([bottom, top, [[0, 0, z0], [0, 0, z1]]])
    cb, ct = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [[i, j, segments + j], [i, segments + j, segments + i], [cb, j, i], [ct, segments + i, segments + j]]
    return TriangleMesh(verts, np.array(tris))


def normalize_to_unit(mesh: TriangleMesh, category: str | None = None) -> TriangleMesh:
    lo, hi = mesh.bounds()
    verts = (mesh.vertices - (lo + hi) / 2.0) / (hi - lo)
    return TriangleMesh(verts, mesh.triangles, category)


# ---------------------------------------------------------------- families

def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _box_family(rng):
    p = {"base_frac": _u(rng, 0.2, 0.8), "top_fx": _u(rng, 0.45, 1.0), "top_fy": _u(rng, 0.45, 1.0)}
    p["top_oy"] = _u(rng, -1, 1) * (1 - p["top_fy"]) / 2
    hb = p["base_frac"]
    parts = [
        cuboid((-0.5, -0.5, 0.0), (0.5, 0.5, hb)),
        cuboid((-p["top_fx"] / 2, p["top_oy"] - p["top_fy"] / 2, hb), (p["top_fx"] / 2, p["top_oy"] + p["top_fy"] / 2, 1.0)),
    ]
    return p, parts


def _cylinder_family(rng):
    p = {"taper": _u(rng, 0.35, 1.0), "foot_frac": _u(rng, 0.0, 0.35), "foot_radius": _u(rng, 0.25, 0.8)}
    hf = p["foot_frac"]
    parts = [frustum(0.5, 0.5 * p["taper"], hf, 1.0)]
    if hf > 0.02:
        parts.append(frustum(0.5 * p["foot_radius"], 0.5 * p["foot_radius"], 0.0, hf))
    return p, parts


def _legs(thick, inset, z1):
    lo, hi = -0.5 + inset, 0.5 - inset - thick
    return [cuboid((x, y, 0.0), (x + thick, y + thick, z1)) for x in (lo, hi) for y in (lo, hi)]


def _table_family(rng):
    p = {
        "top_thick": _u(rng, 0.04, 0.2), "leg_thick": _u(rng, 0.05, 0.2),
        "leg_inset": _u(rng, 0.0, 0.15), "shelf": float(rng.random() < 0.5), "shelf_height": _u(rng, 0.1, 0.5),
    }
    top_z = 1.0 - p["top_thick"]
    parts = [cuboid((-0.5, -0.5, top_z), (0.5, 0.5, 1.0))] + _legs(p["leg_thick"], p["leg_inset"], top_z)
    if p["shelf"]:
        m = p["leg_inset"]
        z = p["shelf_height"] * top_z
        parts.append(cuboid((-0.5 + m, -0.5 + m, z), (0.5 - m, 0.5 - m, z + 0.04)))
    return p, parts


def _chair_family(rng):
    p = {
        "seat_height": _u(rng, 0.3, 0.6), "seat_thick": _u(rng, 0.04, 0.14), "back_thick": _u(rng, 0.05, 0.2),
        "back_width": _u(rng, 0.55, 1.0), "leg_thick": _u(rng, 0.05, 0.16), "arms": float(rng.random() < 0.4),
    }
    sz = p["seat_height"]
    bw = p["back_width"] / 2
    parts = [
        cuboid((-0.5, -0.5, sz), (0.5, 0.5, sz + p["seat_thick"])),
        cuboid((-bw, -0.5, sz + p["seat_thick"]), (bw, -0.5 + p["back_thick"], 1.0)),
    ] + _legs(p["leg_thick"], 0.0, sz)
    if p["arms"]:
        za = sz + p["seat_thick"] + 0.5 * (1.0 - sz - p["seat_thick"])
        for x in (-0.5, 0.5 - 0.08):
            parts.append(cuboid((x, -0.5, za), (x + 0.08, 0.4, za + 0.05)))
    return p, parts


def _shelf_family(rng):
    p = {
        "boards": int(rng.integers(2, 7)), "side_thick": _u(rng, 0.03, 0.15),
        "board_thick": _u(rng, 0.02, 0.08), "board_depth": _u(rng, 0.5, 1.0), "back_height": _u(rng, 0.3, 1.0),
    }
    st, bt = p["side_thick"], p["board_thick"]
    y1 = -0.5 + p["board_depth"]
    parts = [cuboid((-0.5, -0.5, 0.0), (-0.5 + st, 0.5, 1.0)), cuboid((0.5 - st, -0.5, 0.0), (0.5, 0.5, 1.0))]
    for i in range(p["boards"]):
        z = i * (1.0 - bt) / (p["boards"] - 1)
        parts.append(cuboid((-0.5 + st, -0.5, z), (0.5 - st, y1, z + bt)))
    parts.append(cuboid((-0.5 + st, -0.5, 0.0), (0.5 - st, -0.46, p["back_height"])))
    return p, parts


_FAMILY_BUILDERS = {
    "box": _box_family, "cylinder": _cylinder_family, "table": _table_family,
    "chair": _chair_family, "shelf": _shelf_family,
}


def make_shape(family: str, rng: np.random.Generator) -> tuple[dict, TriangleMesh]:
    if family not in _FAMILY_BUILDERS:
        raise ValueError(f"unknown shape family {family!r}; choose from {', '.join(FAMILIES)}")
    params, parts = _FAMILY_BUILDERS[family](rng)
    return params, normalize_to_unit(merge_meshes(parts), family)


# ---------------------------------------------------------------- database

@dataclass
class ShapeRecord:
    shape_id: int
    category: str
    mesh: TriangleMesh
    descriptor: np.ndarray
    samples: np.ndarray = field(repr=False)
    params: dict = field(default_factory=dict)

    def mesh_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.mesh.vertices).tobytes())
        h.update(np.ascontiguousarray(self.mesh.triangles).tobytes())
        return h.hexdigest()


def make_record(shape_id: int, category: str, mesh: TriangleMesh, params: dict | None = None) -> ShapeRecord:
    samples = surface_param(mesh, DESCRIPTOR_SAMPLES, make_rng(shape_id)).points(mesh)
    return ShapeRecord(shape_id, category, mesh, descriptor(samples, UNIT_BOUNDS), samples, params or {})


class ShapeDatabase:
    def __init__(self, records, seed: int = 0, families=None):
        self.records = sorted(records, key=lambda r: r.shape_id)
        self._by_id = {r.shape_id: r for r in self.records}
        if len(self._by_id) != len(self.records):
            raise ValueError("duplicate shape ids")
        self.seed = seed
        self.families = list(families) if families else sorted({r.category for r in self.records})

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, shape_id):
        return shape_id in self._by_id

    def __getitem__(self, shape_id: int) -> ShapeRecord:
        try:
            return self._by_id[shape_id]
        except KeyError:
            raise KeyError(f"shape {shape_id} not in database") from None

    @property
    def ids(self) -> list[int]:
        return [r.shape_id for r in self.records]

    def by_category(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for r in self.records:
            out.setdefault(r.category, []).append(r.shape_id)
        return out

    def descriptor_matrix(self, ids=None) -> np.ndarray:
        ids = self.ids if ids is None else ids
        return np.stack([self[i].descriptor for i in ids])

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "meshes").mkdir(parents=True, exist_ok=True)
        shapes = []
        for r in self.records:
            name = f"meshes/{r.shape_id:05d}.obj"
            formats.write_obj(out / name, r.mesh)
            shapes.append({"shape_id": r.shape_id, "category": r.category, "mesh": name, "params": r.params})
        meta = {"version": formats.FORMAT_VERSION, "seed": self.seed, "families": self.families, "shapes": shapes}
        (out / "db.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        desc = [{"shape_id": r.shape_id, "vector": r.descriptor.tolist()} for r in self.records]
        (out / "descriptors.json").write_text(json.dumps({"version": formats.FORMAT_VERSION, "descriptors": desc}, sort_keys=True))

    @classmethod
    def load(cls, db_dir) -> "ShapeDatabase":
        root = Path(db_dir)
        meta_path = root / "db.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"no shape database at {root} (missing db.json)")
        meta = json.loads(meta_path.read_text())
        if meta.get("version") != formats.FORMAT_VERSION:
            raise ValueError(f"unsupported database version {meta.get('version')}")
        records = []
        for s in meta["shapes"]:
            mesh = formats.read_obj(root / s["mesh"], s["category"])
            records.append(make_record(s["shape_id"], s["category"], mesh, s.get("params")))
        return cls(records, meta.get("seed", 0), meta.get("families"))


def gen_database(families=FAMILIES, count: int = 64, seed: int = 0) -> ShapeDatabase:
    """``count`` shapes, assigned to ``families`` round-robin, each from its own RNG stream."""
    if count < 1:
        raise ValueError("count must be >= 1")
    families = list(families)
    records = []
    for i in range(count):
        family = families[i % len(families)]
        params, mesh = make_shape(family, make_rng(seed, i))
        records.append(make_record(i, family, mesh, params))
    return ShapeDatabase(records, seed, families)


# ---------------------------------------------------------------- boxes

def quarter_turns(angle_deg: float) -> int:
    return int(math.floor(angle_deg / 90.0 + 0.5)) % 4


def candidate_pose(box: OrientedBox, angle_deg: float) -> Pose:
    """Unit-cube shape placed in ``box`` after turning it by ``angle_deg`` about +z.

    For odd quarter turns the x/y scales swap so the rotated shape still
    fills the box footprint.
    """
    sx, sy, sz = box.extents
    if quarter_turns(angle_deg) % 2:
        sx, sy = sy, sx
    return Pose((sx, sy, sz), (0.0, 0.0, box.yaw + math.radians(angle_deg)), box.center)


def perturb_box(box: OrientedBox, yaw_max: float = 0.0, trans_frac: float = 0.0, scale_frac: float = 0.0,
                seed: int = 0, axis_aligned: bool = False) -> OrientedBox:
    """Uniform perturbation of a box proposal (yaw in radians, others relative to extents).

    ``axis_aligned`` replaces the box with its world-axis-aligned bound (yaw 0),
    as produced by segmentation-derived proposals.
    """
    if min(yaw_max, trans_frac, scale_frac) < 0:
        raise ValueError("perturbation magnitudes must be >= 0")
    rng = make_rng(seed, 7)
    extents = np.asarray(box.extents)
    d_yaw = rng.uniform(-1, 1) * yaw_max
    d_center = rng.uniform(-1, 1, 3) * trans_frac * extents
    d_scale = 1.0 + rng.uniform(-1, 1, 3) * scale_frac
    yaw = box.yaw + d_yaw
    new_ext = extents * d_scale
    center = np.asarray(box.center) + d_center
    if axis_aligned:
        c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
        new_ext = np.array([c * new_ext[0] + s * new_ext[1], s * new_ext[0] + c * new_ext[1], new_ext[2]])
        yaw = 0.0
    return OrientedBox(tuple(center), tuple(new_ext), yaw)


# ---------------------------------------------------------------- scenes

@dataclass
class SceneSpec:
    gt_shape: int
    seed: int = 0
    frames: int = 14
    ring_radius: float = 2.2
    camera_height: float = 1.3
    width: int = 64
    height: int = 48
    focal: float = 50.0
    sigma: float = 0.0
    occluders: float = 0.0
    dropout: float = 0.0
    max_target_points: int = 1500
    unknown_orientation: bool = True
    box_yaw_max: float = 0.0
    box_trans_frac: float = 0.0
    box_scale_frac: float = 0.0
    axis_aligned: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not (0 <= self.occluders < 1 and 0 <= self.dropout < 1):
            raise ValueError("occluder and dropout fractions must lie in [0, 1)")
        if self.frames < 1:
            raise ValueError("need at least one frame")


@dataclass
class Frame:
    camera: Camera
    background_depth: DepthMap
    scan_depth_with_target: DepthMap
    sensor_depth: DepthMap
    target_mask: Mask


@dataclass
class Scene:
    target_points: np.ndarray
    box: OrientedBox
    frames: list[Frame]
    category_hint: str | None = None
    gt_shape: int | None = None
    gt_pose: Pose | None = None
    gt_box: OrientedBox | None = None
    spec: SceneSpec | None = None
    name: str = "scene"
    _stack: object = field(default=None, repr=False, compare=False)

    @property
    def rig(self) -> CameraRig:
        return self.stack().rig

    def stack(self):
        """Frame rasters stacked into (frames, H, W) arrays for fast objectives."""
        if self._stack is None:
            from .objective import FrameStack
            self._stack = FrameStack.from_frames(self.frames)
        return self._stack


def _room_mesh(half: float = 3.0, height: float = 2.6) -> TriangleMesh:
    t = 0.05
    return merge_meshes([
        cuboid((-half, -half, -t), (half, half, 0.0)),
        cuboid((-half, -half, height), (half, half, height + t)),
        cuboid((-half - t, -half, 0.0), (-half, half, height)),
        cuboid((half, -half, 0.0), (half + t, half, height)),
        cuboid((-half, -half - t, 0.0), (half, -half, height)),
        cuboid((-half, half, 0.0), (half, half + t, height)),
    ])


def _to_f32(depth: np.ndarray) -> np.ndarray:
    out = depth.astype(np.float32)
    out[~np.isfinite(out)] = np.nan
    return out


def gen_scene(db: ShapeDatabase, spec: SceneSpec, name: str = "scene") -> Scene:
    if spec.gt_shape not in db:
        raise KeyError(f"ground-truth shape {spec.gt_shape} not in database")
    record = db[spec.gt_shape]
    rng = make_rng(spec.seed, 11)

    dims = np.array([rng.uniform(0.45, 1.0), rng.uniform(0.45, 1.0), rng.uniform(0.45, 1.1)])
    yaw = float(rng.uniform(0, 2 * np.pi))
    center = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), dims[2] / 2])
    gt_pose = Pose(tuple(dims), (0.0, 0.0, yaw), tuple(center))

    turns = int(rng.integers(4)) if spec.unknown_orientation else 0
    ext = dims[[1, 0, 2]] if turns % 2 else dims
    gt_box = OrientedBox(tuple(center), tuple(ext), yaw - turns * np.pi / 2)
    box = gt_box
    if spec.box_yaw_max or spec.box_trans_frac or spec.box_scale_frac or spec.axis_aligned:
        box = perturb_box(gt_box, spec.box_yaw_max, spec.box_trans_frac, spec.box_scale_frac,
                          seed=spec.seed, axis_aligned=spec.axis_aligned)

    phase = rng.uniform(0, 2 * np.pi)
    cams = []
    for i in range(spec.frames):
        a = phase + 2 * np.pi * i / spec.frames
        eye = center + np.array([spec.ring_radius * np.cos(a), spec.ring_radius * np.sin(a), 0.0])
        eye[2] = spec.camera_height + rng.uniform(-0.15, 0.15)
        cams.append(Camera.look_at(eye, center, spec.width, spec.height, spec.focal, near=0.05, far=10.0))

    static = [_room_mesh()]
    radius = 0.5 * float(np.hypot(dims[0], dims[1]))
    n_occ = int(round(spec.occluders * spec.frames))
    for i in sorted(rng.choice(spec.frames, size=n_occ, replace=False).tolist()) if n_occ else []:
        eye = np.linalg.inv(cams[i].world_to_cam)[:3, 3]
        direction = (eye - center)[:2]
        dist = float(np.linalg.norm(direction))
        along = rng.uniform(radius + 0.2, max(radius + 0.25, 0.6 * dist))
        pos = center[:2] + direction / dist * along
        half = rng.uniform(0.08, 0.18)
        top = rng.uniform(0.3, 1.0) * spec.camera_height
        static.append(cuboid((pos[0] - half, pos[1] - half, 0.0), (pos[0] + half, pos[1] + half, top)))
    static_mesh = merge_meshes(static)

    rig = CameraRig(cams)
    background = _to_f32(rig.render(static_mesh))
    target_depth = _to_f32(rig.render(record.mesh, gt_pose))
    bg_inf = np.where(np.isnan(background), np.inf, background)
    tgt_inf = np.where(np.isnan(target_depth), np.inf, target_depth)
    scan = _to_f32(np.minimum(bg_inf, tgt_inf))
    target_mask = np.isfinite(tgt_inf) & (tgt_inf <= bg_inf)

    noise_rng = make_rng(spec.seed, 13)
    sensor = scan.copy()
    if spec.sigma > 0:
        valid = ~np.isnan(sensor)
        sensor[valid] = (sensor[valid] + noise_rng.normal(0.0, spec.sigma, int(valid.sum()))).astype(np.float32)

    points = [cams[f].backproject(sensor[f].astype(np.float64), target_mask[f]) for f in range(spec.frames)]
    cloud = np.vstack(points) if points else np.zeros((0, 3))
    cloud_rng = make_rng(spec.seed, 17)
    if len(cloud) > spec.max_target_points:
        keep = np.sort(cloud_rng.choice(len(cloud), spec.max_target_points, replace=False))
        cloud = cloud[keep]
    if spec.dropout > 0:
        cloud = cloud[cloud_rng.random(len(cloud)) >= spec.dropout]

    frames = [
        Frame(cams[f], DepthMap(background[f]), DepthMap(scan[f]), DepthMap(sensor[f]), Mask(target_mask[f]))
        for f in range(spec.frames)
    ]
    return Scene(as_cloud(cloud), box, frames, record.category, spec.gt_shape, gt_pose, gt_box, spec, name)


# ---------------------------------------------------------------- scene files

def save_scene(scene: Scene, out_dir) -> None:
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    frames = []
    for i, fr in enumerate(scene.frames):
        stem = out / "frames" / f"{i:02d}"
        cam = fr.camera
        formats.write_depth(f"{stem}_background", fr.background_depth.depth, cam.near, cam.far)
        formats.write_depth(f"{stem}_scan", fr.scan_depth_with_target.depth, cam.near, cam.far)
        formats.write_depth(f"{stem}_sensor", fr.sensor_depth.depth, cam.near, cam.far)
        formats.write_pbm(f"{stem}_mask.pbm", fr.target_mask.bits)
        frames.append({"camera": cam.to_dict(), "stem": f"frames/{i:02d}"})
    formats.write_points(out / "target.xyz", scene.target_points)
    meta = {
        "version": formats.FORMAT_VERSION,
        "name": scene.name,
        "box": scene.box.to_dict(),
        "category_hint": scene.category_hint,
        "spec": asdict(scene.spec) if scene.spec else None,
        "ground_truth": None if scene.gt_shape is None else {
            "shape_id": scene.gt_shape, "pose": scene.gt_pose.to_dict(),
            "box": scene.gt_box.to_dict() if scene.gt_box else None,
        },
        "frames": frames,
    }
    (out / "scene.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_scene(scene_dir) -> Scene:
    root = Path(scene_dir)
    meta_path = root / "scene.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no scene at {root} (missing scene.json)")
    meta = json.loads(meta_path.read_text())
    if meta.get("version") != formats.FORMAT_VERSION:
        raise ValueError(f"unsupported scene version {meta.get('version')}")
    frames = []
    for fr in meta["frames"]:
        stem = root / fr["stem"]
        bg = formats.read_depth(f"{stem}_background")[0].astype(np.float32)
        scan = formats.read_depth(f"{stem}_scan")[0].astype(np.float32)
        sensor = formats.read_depth(f"{stem}_sensor")[0].astype(np.float32)
        mask = formats.read_pbm(f"{stem}_mask.pbm")
        frames.append(Frame(Camera.from_dict(fr["camera"]), DepthMap(bg), DepthMap(scan), DepthMap(sensor), Mask(mask)))
    gt = meta.get("ground_truth")
    spec = SceneSpec(**meta["spec"]) if meta.get("spec") else None
    return Scene(
        formats.read_points(root / "target.xyz"),
        OrientedBox.from_dict(meta["box"]),
        frames,
        meta.get("category_hint"),
        gt["shape_id"] if gt else None,
        Pose.from_dict(gt["pose"]) if gt else None,
        OrientedBox.from_dict(gt["box"]) if gt and gt.get("box") else None,
        spec,
        meta.get("name", root.name),
    )


def posed_samples(mesh: TriangleMesh, pose: Pose, n: int, seed: int) -> np.ndarray:
    return surface_param(mesh, n, make_rng(seed), scale=pose.scale).points(mesh, pose)
