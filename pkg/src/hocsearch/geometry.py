"""Core 3D types, surface sampling, nearest-neighbour index and chamfer distances.

Conventions: +z is up, yaw rotates about z, and a pose maps a canonical
point ``p`` to ``R @ (scale * p) + translation`` with ``R = Rz @ Ry @ Rx``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

N_MIN_SAMPLES = 64
DEFAULT_DENSITY = 25000


def as_cloud(points) -> np.ndarray:
    cloud = np.asarray(points, dtype=np.float64)
    if cloud.size == 0:
        return np.zeros((0, 3))
    cloud = cloud.reshape(-1, 3)
    if not np.all(np.isfinite(cloud)):
        raise ValueError("point cloud contains non-finite coordinates")
    return cloud


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of non-negative ints."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def euler_xyz_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rot_x = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    rot_y = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rot_z = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return rot_z @ rot_y @ rot_x


@dataclass(frozen=True)
class Pose:
    """9-DOF placement: per-axis scale, Euler XYZ rotation (radians), translation (m)."""

    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("scale", "rotation", "translation"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3 or not all(np.isfinite(value)):
                raise ValueError(f"pose {name} must be three finite numbers")
            object.__setattr__(self, name, value)
        if min(self.scale) <= 0:
            raise ValueError("pose scales must be positive")

    @property
    def yaw(self) -> float:
        return self.rotation[2]

    def matrix(self) -> np.ndarray:
        return euler_xyz_matrix(*self.rotation)

    def with_yaw(self, yaw: float) -> "Pose":
        return Pose(self.scale, (self.rotation[0], self.rotation[1], yaw), self.translation)

    def as_vector(self) -> np.ndarray:
        return np.array(self.scale + self.rotation + self.translation)

    @classmethod
    def from_vector(cls, vec) -> "Pose":
        vec = [float(v) for v in vec]
        return cls(tuple(vec[0:3]), tuple(vec[3:6]), tuple(vec[6:9]))

    def to_dict(self) -> dict:
        return {"scale": list(self.scale), "rotation": list(self.rotation), "translation": list(self.translation)}

    @classmethod
    def from_dict(cls, data: dict) -> "Pose":
        return cls(tuple(data["scale"]), tuple(data["rotation"]), tuple(data["translation"]))


IDENTITY_POSE = Pose()


def apply_pose(pose: Pose, cloud) -> np.ndarray:
    cloud = as_cloud(cloud)
    scaled = cloud * np.asarray(pose.scale)
    return scaled @ pose.matrix().T + np.asarray(pose.translation)


@dataclass(frozen=True)
class OrientedBox:
    center: tuple[float, float, float]
    extents: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "extents", tuple(float(v) for v in self.extents))
        object.__setattr__(self, "yaw", float(self.yaw))
        if min(self.extents) <= 0:
            raise ValueError("box extents must be positive")

    @property
    def volume(self) -> float:
        sx, sy, sz = self.extents
        return sx * sy * sz

    def pose(self) -> Pose:
        """Pose placing the unit cube [-0.5, 0.5]^3 onto this box."""
        return Pose(self.extents, (0.0, 0.0, self.yaw), self.center)

    def to_local(self, cloud) -> np.ndarray:
        """World points expressed in the box frame (unrotated, centred, metres)."""
        rot = euler_xyz_matrix(0.0, 0.0, self.yaw)
        return (as_cloud(cloud) - np.asarray(self.center)) @ rot

    def to_dict(self) -> dict:
        return {"center": list(self.center), "extents": list(self.extents), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, data: dict) -> "OrientedBox":
        return cls(tuple(data["center"]), tuple(data["extents"]), data["yaw"])


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    category: str | None = None

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError("triangle index out of range")
        verts.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def transformed(self, pose: Pose) -> "TriangleMesh":
        return TriangleMesh(apply_pose(pose, self.vertices), self.triangles, self.category)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_areas(self, scale=(1.0, 1.0, 1.0)) -> np.ndarray:
        verts = self.vertices * np.asarray(scale, dtype=np.float64)
        a, b, c = (verts[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def merge_meshes(meshes, category: str | None = None) -> TriangleMesh:
    verts, tris, offset = [], [], 0
    for mesh in meshes:
        verts.append(mesh.vertices)
        tris.append(mesh.triangles + offset)
        offset += len(mesh.vertices)
    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), category)
    return TriangleMesh(np.vstack(verts), np.vstack(tris), category)


@dataclass(frozen=True)
class SurfaceParam:
    """Fixed surface samples as (triangle index, barycentric weights)."""

    tri_index: np.ndarray
    bary: np.ndarray = field(repr=False)

    def points(self, mesh: TriangleMesh, pose: Pose | None = None) -> np.ndarray:
        verts = mesh.vertices if pose is None else apply_pose(pose, mesh.vertices)
        corners = mesh.triangles[self.tri_index]
        return (
            self.bary[:, :1] * verts[corners[:, 0]]
            + self.bary[:, 1:2] * verts[corners[:, 1]]
            + self.bary[:, 2:3] * verts[corners[:, 2]]
        )


def surface_param(mesh: TriangleMesh, n: int, rng: np.random.Generator, scale=(1.0, 1.0, 1.0)) -> SurfaceParam:
    """Area-uniform sample parametrization by inverting the cumulative triangle area.

    ``scale`` is the per-axis scale applied before sampling; rotation and
    translation preserve area, so sampling with the pose scale is uniform on
    the posed surface.
    """
    if mesh.is_empty:
        raise ValueError("empty mesh")
    areas = mesh.triangle_areas(scale)
    cdf = np.cumsum(areas)
    total = cdf[-1]
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    u = rng.random(n) * total
    tri_index = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.column_stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2])
    return SurfaceParam(tri_index, bary)


def sample_count(box: OrientedBox, m: float = DEFAULT_DENSITY) -> int:
    if m <= 0:
        raise ValueError("sampling density must be positive")
    return max(int(round(m * box.volume)), N_MIN_SAMPLES)


def sample_surface(mesh: TriangleMesh, box: OrientedBox, m: float = DEFAULT_DENSITY, seed: int = 0) -> np.ndarray:
    """Draw ``max(round(m * sx*sy*sz), 64)`` area-uniform points from ``mesh``."""
    if mesh.is_empty:
        raise ValueError("empty mesh")
    n = sample_count(box, m)
    return surface_param(mesh, n, make_rng(seed)).points(mesh)


def sample_posed(mesh: TriangleMesh, pose: Pose, n: int, seed_key: tuple[int, ...]) -> np.ndarray:
    param = surface_param(mesh, n, make_rng(*seed_key), scale=pose.scale)
    return param.points(mesh, pose)


class KdIndex:
    """Immutable nearest-neighbour index over a point cloud."""

    def __init__(self, cloud):
        self.points = as_cloud(cloud)
        if len(self.points) == 0:
            raise ValueError("cannot index an empty point cloud")
        self._tree = cKDTree(self.points, balanced_tree=False, compact_nodes=False)

    def __len__(self):
        return len(self.points)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        dist, idx = self._tree.query(as_cloud(queries), k=1)
        return dist, idx

    def nearest_distances(self, queries) -> np.ndarray:
        return self.query(queries)[0]


def _nonempty(cloud, name: str) -> np.ndarray:
    cloud = as_cloud(cloud)
    if len(cloud) == 0:
        raise ValueError(f"empty point cloud: {name}")
    return cloud


def single_direction_chamfer(p, q, q_index: KdIndex | None = None) -> float:
    """Mean distance from each point of ``p`` to its nearest neighbour in ``q``."""
    p = _nonempty(p, "P")
    if q_index is None:
        q_index = KdIndex(_nonempty(q, "Q"))
    return float(np.mean(q_index.nearest_distances(p)))


def chamfer(p, q) -> float:
    p = _nonempty(p, "P")
    q = _nonempty(q, "Q")
    return single_direction_chamfer(p, q) + single_direction_chamfer(q, p)
