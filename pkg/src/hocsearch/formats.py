"""On-disk formats: OBJ subset, xyz point text, depth rasters and PBM masks."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, as_cloud

FORMAT_VERSION = 1


def read_obj(path, category: str | None = None) -> TriangleMesh:
    """Read ``v`` and ``f`` records; polygons are fan-triangulated."""
    verts, tris = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for token in parts[1:]:
                    i = int(token.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError(f"{path}:{lineno}: face with fewer than 3 vertices")
                for j in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[j], idx[j + 1]])
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3), category)


def write_obj(path, mesh: TriangleMesh) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_points(path) -> np.ndarray:
    text = Path(path).read_text().strip()
    if not text:
        return np.zeros((0, 3))
    return as_cloud(np.loadtxt(path, dtype=np.float64, ndmin=2))


def write_points(path, cloud) -> None:
    cloud = as_cloud(cloud)
    Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.tolist()))


def write_depth(stem, depth: np.ndarray, near: float, far: float) -> None:
    """Raw little-endian float32 raster (NaN = invalid) plus a JSON sidecar."""
    stem = Path(stem)
    height, width = depth.shape
    stem.with_suffix(".f32").write_bytes(np.ascontiguousarray(depth, dtype="<f4").tobytes())
    sidecar = {"version": FORMAT_VERSION, "width": width, "height": height, "near": near, "far": far}
    stem.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def read_depth(stem) -> tuple[np.ndarray, float, float]:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    raw = np.frombuffer(stem.with_suffix(".f32").read_bytes(), dtype="<f4")
    if raw.size != meta["width"] * meta["height"]:
        raise ValueError(f"{stem}: raster size does not match sidecar")
    return raw.reshape(meta["height"], meta["width"]).astype(np.float64), meta["near"], meta["far"]


def write_pbm(path, bits: np.ndarray) -> None:
    height, width = bits.shape
    packed = np.packbits(bits.astype(np.uint8), axis=1)
    Path(path).write_bytes(f"P4\n{width} {height}\n".encode() + packed.tobytes())


def read_pbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode())
    pos += 1
    if tokens[0] != "P4":
        raise ValueError(f"{path}: not a binary PBM")
    width, height = int(tokens[1]), int(tokens[2])
    row_bytes = (width + 7) // 8
    body = np.frombuffer(data[pos:pos + row_bytes * height], dtype=np.uint8)
    if body.size != row_bytes * height:
        raise ValueError(f"{path}: truncated PBM body")
    return np.unpackbits(body.reshape(height, row_bytes), axis=1)[:, :width].astype(bool)
