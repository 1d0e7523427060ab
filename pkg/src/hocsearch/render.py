"""Deterministic CPU z-buffer rasterizer (pinhole camera, depth only).

Camera frame follows the OpenCV convention: x right, y down, z forward.
Pixel ``(u, v)`` has its centre at integer coordinates, so a point on the
optical axis lands exactly on pixel ``(cx, cy)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .geometry import Pose, TriangleMesh, apply_pose


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray
    near: float = 0.05
    far: float = 20.0

    def __post_init__(self):
        mat = np.asarray(self.world_to_cam, dtype=np.float64).reshape(4, 4)
        mat.setflags(write=False)
        object.__setattr__(self, "world_to_cam", mat)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("require 0 < near < far")
        rot = mat[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("world_to_cam must be a rigid transform")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def look_at(cls, eye, target, width, height, fx, fy=None, near=0.05, far=20.0, up=(0.0, 0.0, 1.0)) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        mat = np.eye(4)
        mat[:3, :3] = rot
        mat[:3, 3] = -rot @ eye
        fy = fx if fy is None else fy
        return cls(fx, fy, (width - 1) / 2.0, (height - 1) / 2.0, width, height, mat, near, far)

    def project(self, points) -> np.ndarray:
        """World points to (u, v, depth) rows."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cam = pts @ self.world_to_cam[:3, :3].T + self.world_to_cam[:3, 3]
        z = cam[:, 2]
        return np.column_stack([self.fx * cam[:, 0] / z + self.cx, self.fy * cam[:, 1] / z + self.cy, z])

    def backproject(self, depth: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """World points for the masked pixels of a depth raster."""
        v, u = np.nonzero(mask)
        z = depth[v, u]
        cam = np.column_stack([(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z])
        rot = self.world_to_cam[:3, :3]
        return (cam - self.world_to_cam[:3, 3]) @ rot

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "world_to_cam": self.world_to_cam.tolist(), "near": self.near, "far": self.far,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Camera":
        return cls(data["fx"], data["fy"], data["cx"], data["cy"], data["width"], data["height"],
                   np.array(data["world_to_cam"]), data["near"], data["far"])


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in metres; invalid pixels hold NaN."""

    depth: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.depth)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @classmethod
    def empty(cls, height: int, width: int) -> "DepthMap":
        return cls(np.full((height, width), np.nan))


@dataclass(frozen=True)
class Mask:
    bits: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())


@numba.njit(cache=True)
def _clip_near(p, near, out):
    # Sutherland-Hodgman against the plane z = near; returns vertex count (0, 3 or 4).
    n = 0
    for i in range(3):
        a = p[i]
        b = p[(i + 1) % 3]
        a_in = a[2] >= near
        b_in = b[2] >= near
        if a_in:
            out[n, 0] = a[0]
            out[n, 1] = a[1]
            out[n, 2] = a[2]
            n += 1
        if a_in != b_in:
            t = (near - a[2]) / (b[2] - a[2])
            out[n, 0] = a[0] + t * (b[0] - a[0])
            out[n, 1] = a[1] + t * (b[1] - a[1])
            out[n, 2] = near
            n += 1
    return n


@numba.njit(cache=True)
def _fill_triangle(a, b, c, fx, fy, cx, cy, near, far, depth):
    height, width = depth.shape
    ua = fx * a[0] / a[2] + cx
    va = fy * a[1] / a[2] + cy
    ub = fx * b[0] / b[2] + cx
    vb = fy * b[1] / b[2] + cy
    uc = fx * c[0] / c[2] + cx
    vc = fy * c[1] / c[2] + cy
    area = (ub - ua) * (vc - va) - (vb - va) * (uc - ua)
    if area == 0.0:
        return
    umin = max(int(np.ceil(min(ua, min(ub, uc)))), 0)
    umax = min(int(np.floor(max(ua, max(ub, uc)))), width - 1)
    vmin = max(int(np.ceil(min(va, min(vb, vc)))), 0)
    vmax = min(int(np.floor(max(va, max(vb, vc)))), height - 1)
    inv_a = 1.0 / a[2]
    inv_b = 1.0 / b[2]
    inv_c = 1.0 / c[2]
    for v in range(vmin, vmax + 1):
        for u in range(umin, umax + 1):
            w0 = (ub - u) * (vc - v) - (vb - v) * (uc - u)
            w1 = (uc - u) * (va - v) - (vc - v) * (ua - u)
            w2 = (ua - u) * (vb - v) - (va - v) * (ub - u)
            if area > 0.0:
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
            else:
                if w0 > 0.0 or w1 > 0.0 or w2 > 0.0:
                    continue
            inv_z = (w0 * inv_a + w1 * inv_b + w2 * inv_c) / area
            z = 1.0 / inv_z
            if z < near or z > far:
                continue
            if z < depth[v, u]:
                depth[v, u] = z


@numba.njit(cache=True)
def _raster_frames(verts, tris, mats, intr, clip, depth):
    n_frames = mats.shape[0]
    poly = np.empty((4, 3))
    tri = np.empty((3, 3))
    for f in range(n_frames):
        m = mats[f]
        fx = intr[f, 0]
        fy = intr[f, 1]
        cx = intr[f, 2]
        cy = intr[f, 3]
        near = clip[f, 0]
        far = clip[f, 1]
        cam = np.empty((verts.shape[0], 3))
        for i in range(verts.shape[0]):
            for r in range(3):
                cam[i, r] = m[r, 0] * verts[i, 0] + m[r, 1] * verts[i, 1] + m[r, 2] * verts[i, 2] + m[r, 3]
        for t in range(tris.shape[0]):
            for k in range(3):
                for r in range(3):
                    tri[k, r] = cam[tris[t, k], r]
            if tri[0, 2] < near and tri[1, 2] < near and tri[2, 2] < near:
                continue
            n = _clip_near(tri, near, poly)
            for j in range(1, n - 1):
                _fill_triangle(poly[0], poly[j], poly[j + 1], fx, fy, cx, cy, near, far, depth[f])


def _stack_cameras(cams):
    mats = np.stack([c.world_to_cam for c in cams])
    intr = np.array([[c.fx, c.fy, c.cx, c.cy] for c in cams], dtype=np.float64)
    clip = np.array([[c.near, c.far] for c in cams], dtype=np.float64)
    return mats, intr, clip


class CameraRig:
    """A fixed set of same-sized cameras rendered in one kernel call."""

    def __init__(self, cameras):
        self.cameras = list(cameras)
        shapes = {c.shape for c in self.cameras}
        if len(shapes) != 1:
            raise ValueError("all cameras in a rig must share image dimensions")
        self.shape = shapes.pop()
        self._mats, self._intr, self._clip = _stack_cameras(self.cameras)

    def render_vertices(self, vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
        """Depth stack (frames, height, width) with +inf where nothing was drawn."""
        depth = np.full((len(self.cameras),) + self.shape, np.inf)
        if len(triangles):
            _raster_frames(np.ascontiguousarray(vertices, dtype=np.float64),
                           np.ascontiguousarray(triangles, dtype=np.int64),
                           self._mats, self._intr, self._clip, depth)
        return depth

    def render(self, mesh: TriangleMesh, pose: Pose | None = None) -> np.ndarray:
        verts = mesh.vertices if pose is None else apply_pose(pose, mesh.vertices)
        return self.render_vertices(verts, mesh.triangles)


def rasterize(mesh: TriangleMesh, pose: Pose | None, cam: Camera) -> tuple[DepthMap, Mask]:
    depth = CameraRig([cam]).render(mesh, pose)[0]
    covered = np.isfinite(depth)
    depth[~covered] = np.nan
    return DepthMap(depth), Mask(covered)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def composite_min(a: DepthMap, b: DepthMap) -> DepthMap:
    _check_same_shape(a, b)
    return DepthMap(np.fmin(a.depth, b.depth))


def silhouette_iou(a: Mask, b: Mask) -> float:
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    _check_same_shape(a, b)
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.bits & b.bits) / union
