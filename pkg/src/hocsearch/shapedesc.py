"""Occupancy-histogram shape descriptor, seeded k-means and hierarchical clustering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import as_cloud, make_rng

GRID = 4
DESCRIPTOR_DIM = GRID ** 3 + 3
MAX_LLOYD_ITERATIONS = 100


def descriptor(cloud, bounds: tuple | None = None) -> np.ndarray:
    """64-bin normalized occupancy histogram followed by 3 aspect-ratio features.

    The cloud is mapped into a cube using its own bounding box (or ``bounds``,
    a ``(lo, hi)`` pair) scaled by the longest side, so aspect is preserved.
    """
    cloud = as_cloud(cloud)
    if len(cloud) == 0:
        raise ValueError("empty point cloud")
    if bounds is None:
        lo, hi = cloud.min(axis=0), cloud.max(axis=0)
    else:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    extent = np.maximum(hi - lo, 1e-12)
    side = extent.max()
    unit = (cloud - lo) / side
    cells = np.clip(np.floor(unit * GRID).astype(np.int64), 0, GRID - 1)
    flat = (cells[:, 0] * GRID + cells[:, 1]) * GRID + cells[:, 2]
    hist = np.bincount(flat, minlength=GRID ** 3).astype(np.float64)
    hist /= hist.sum()
    return np.concatenate([hist, extent / side])


def _sq_dists(vectors: np.ndarray, means: np.ndarray) -> np.ndarray:
    diff = vectors[:, None, :] - means[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeanspp(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(vectors)
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(vectors, vectors[chosen]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a chosen mean
            candidates = [i for i in range(n) if i not in chosen]
            nxt = candidates[int(rng.integers(len(candidates)))]
        else:
            nxt = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dists(vectors, vectors[[nxt]])[:, 0])
    return vectors[chosen].copy()


@dataclass
class KMeansResult:
    assignments: np.ndarray
    means: np.ndarray
    objective_history: list[float] = field(default_factory=list)


def kmeans(vectors, k: int, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding; empty clusters steal the
    farthest point of the largest cluster."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors[:, None]
    n = len(vectors)
    if n == 0 or k < 1:
        raise ValueError("kmeans needs at least one vector and k >= 1")
    if n <= k:
        return KMeansResult(np.arange(n), vectors.copy(), [0.0])
    rng = make_rng(seed, n, k)
    means = _kmeanspp(vectors, k, rng)
    assignments = np.full(n, -1)
    history = []
    for _ in range(MAX_LLOYD_ITERATIONS):
        new = np.argmin(_sq_dists(vectors, means), axis=1)
        new = _repair_empty(vectors, new, k, means)  # may move empty means onto stolen points
        if np.array_equal(new, assignments):
            break
        assignments = new
        means = np.stack([vectors[assignments == j].mean(axis=0) for j in range(k)])
        history.append(float(((vectors - means[assignments]) ** 2).sum()))
    return KMeansResult(assignments, means, history)


def _repair_empty(vectors, assignments, k, means):
    assignments = assignments.copy()
    for j in range(k):
        if np.any(assignments == j):
            continue
        counts = np.bincount(assignments, minlength=k)
        largest = int(np.argmax(counts))
        members = np.nonzero(assignments == largest)[0]
        dist = ((vectors[members] - means[largest]) ** 2).sum(axis=1)
        stolen = members[int(np.argmax(dist))]
        assignments[stolen] = j
        means[j] = vectors[stolen]
    return assignments


@dataclass
class ClusterNode:
    members: list[int]
    children: list["ClusterNode"]
    centroid: int

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list[int]:
        if self.is_leaf:
            return list(self.members)
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def depth(self) -> int:
        """Number of levels below this node (0 for a leaf)."""
        if self.is_leaf:
            return 0
        return 1 + max(c.depth() for c in self.children)


def centroid_of(ids, vectors) -> int:
    """Member whose descriptor is nearest the members' mean; ties go to the lowest id."""
    ids = list(ids)
    if not ids:
        raise ValueError("empty cluster")
    vecs = np.asarray(vectors, dtype=np.float64).reshape(len(ids), -1)
    dist = ((vecs - vecs.mean(axis=0)) ** 2).sum(axis=1)
    best = min(range(len(ids)), key=lambda i: (dist[i], ids[i]))
    return ids[best]


def hierarchical_cluster(ids, vectors, k: int = 5, seed: int = 0) -> ClusterNode:
    """Recursive k-means over ``vectors`` (row i belongs to ``ids[i]``)."""
    ids = [int(i) for i in ids]
    vectors = np.asarray(vectors, dtype=np.float64).reshape(len(ids), -1)
    if not ids:
        raise ValueError("cannot cluster an empty id set")
    if k < 2:
        raise ValueError("branching factor k must be >= 2")
    lookup = dict(zip(ids, vectors))

    def build(members, path):
        vecs = np.stack([lookup[m] for m in members])
        centre = centroid_of(members, vecs)
        if len(members) == 1:
            return ClusterNode(members, [], centre)
        if len(members) <= k:
            children = [ClusterNode([m], [], m) for m in members]
            return ClusterNode(members, children, centre)
        result = kmeans(vecs, k, seed=int(np.random.SeedSequence([seed, *path]).generate_state(1)[0]))
        groups = [[m for m, a in zip(members, result.assignments) if a == j] for j in range(k)]
        if sum(1 for g in groups if g) == 1:
            # coincident descriptors: fall back to an even split so recursion terminates
            groups = [members[j::k] for j in range(k)]
        children = [build(g, path + (j,)) for j, g in enumerate(groups) if g]
        return ClusterNode(members, children, centre)

    return build(sorted(ids), ())
