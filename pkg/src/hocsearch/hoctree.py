"""HOC-Tree: category and pose property nodes above per-category cluster trees.

The cluster topology of a category is computed once and expanded under each
of its pose nodes; every expanded node carries its own search statistics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .objective import Candidate, seed_key
from .shapedesc import ClusterNode, hierarchical_cluster
from .synth import ShapeDatabase, candidate_pose

TREE_VERSION = 1
DEFAULT_POSE_ANGLES = (0.0, 90.0, 180.0, 270.0)


class TreeFormatError(ValueError):
    pass


@dataclass(eq=False)
class HocNode:
    kind: str  # root | category | pose | cluster | leaf
    label: str | None = None
    angle: float | None = None
    shape_id: int | None = None
    centroid: int | None = None
    children: list["HocNode"] = field(default_factory=list)
    parent: "HocNode | None" = field(default=None, repr=False)
    index: int = -1
    pose_node: "HocNode | None" = field(default=None, repr=False)
    visits: int = 0
    score: float = -math.inf
    locked: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"

    def iter_subtree(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> list["HocNode"]:
        return [n for n in self.iter_subtree() if n.is_leaf]

    def path_from_root(self) -> list["HocNode"]:
        path, node = [], self
        while node is not None:
            path.append(node)
            node = node.parent
        return path[::-1]

    def signature(self) -> tuple:
        return (self.kind, self.label, self.angle, self.shape_id, self.centroid,
                self.visits, self.score, self.locked, tuple(c.signature() for c in self.children))


class HocTree:
    def __init__(self, root: HocNode, pose_angles, categories, k: int = 5, seed: int = 0, db_path: str | None = None):
        self.root = root
        self.db_path = db_path
        self.pose_angles = [float(a) for a in pose_angles]
        self.categories = list(categories)
        self.k = k
        self.seed = seed
        self.nodes: list[HocNode] = []
        self._reindex()

    def _reindex(self):
        self.nodes = list(self.root.iter_subtree())
        for i, node in enumerate(self.nodes):
            node.index = i
            for child in node.children:
                child.parent = node
        for node in self.nodes:
            anc = node
            while anc is not None and anc.kind != "pose":
                anc = anc.parent
            node.pose_node = anc
        self.shape_index: dict[int, list[int]] = {}
        for leaf in self.leaves():
            self.shape_index.setdefault(leaf.shape_id, []).append(leaf.index)

    def leaves(self) -> list[HocNode]:
        return [n for n in self.nodes if n.is_leaf]

    def pose_nodes(self) -> list[HocNode]:
        return [n for n in self.nodes if n.kind == "pose"]

    def leaf_count(self) -> int:
        return sum(1 for n in self.nodes if n.is_leaf)

    def cluster_depth(self) -> int:
        """Levels between a pose node and its deepest leaf."""
        def depth(node):
            return 0 if node.is_leaf else 1 + max(depth(c) for c in node.children)
        return max(depth(p) for p in self.pose_nodes())

    def reset_stats(self):
        for node in self.nodes:
            node.visits, node.score, node.locked = 0, -math.inf, False

    def signature(self) -> tuple:
        return (tuple(self.pose_angles), tuple(self.categories), self.root.signature())


def leaf_count(tree: HocTree) -> int:
    return tree.leaf_count()


def candidate_of(leaf: HocNode, box, db: ShapeDatabase, pose=None) -> Candidate:
    """The leaf's shape placed in the box turned by its pose node's yaw.

    ``pose`` overrides the box-derived placement (a refined branch pose).
    """
    angle = leaf.pose_node.angle
    placed = candidate_pose(box, angle) if pose is None else pose
    return Candidate(db[leaf.shape_id], placed, seed_key(leaf.shape_id, angle))


def _expand(cluster: ClusterNode) -> HocNode:
    if cluster.is_leaf:
        return HocNode("leaf", shape_id=cluster.members[0], centroid=cluster.members[0])
    return HocNode("cluster", centroid=cluster.centroid, children=[_expand(c) for c in cluster.children])


def _pose_subtree(angle: float, cluster: ClusterNode) -> HocNode:
    node = HocNode("pose", angle=float(angle), centroid=cluster.centroid)
    node.children = [_expand(cluster)] if cluster.is_leaf else [_expand(c) for c in cluster.children]
    return node


def build_tree(db: ShapeDatabase, pose_angles=DEFAULT_POSE_ANGLES, with_category_level: bool = False,
               k: int = 5, seed: int = 0) -> HocTree:
    if len(db) == 0:
        raise ValueError("cannot build a tree from an empty database")
    pose_angles = list(pose_angles)
    if not pose_angles:
        raise ValueError("need at least one pose angle")
    if with_category_level:
        groups = db.by_category()
    else:
        groups = {"all": db.ids}
    root = HocNode("root")
    for label in sorted(groups):
        ids = groups[label]
        cluster = hierarchical_cluster(ids, db.descriptor_matrix(ids), k=k, seed=seed)
        poses = [_pose_subtree(a, cluster) for a in pose_angles]
        if with_category_level:
            root.children.append(HocNode("category", label=label, centroid=cluster.centroid, children=poses))
        else:
            root.children.extend(poses)
    return HocTree(root, pose_angles, sorted(groups) if with_category_level else [], k, seed)


# ---------------------------------------------------------------- serialization

def serialize(tree: HocTree) -> bytes:
    nodes = []
    for node in tree.nodes:
        rec = {"parent": node.parent.index if node.parent is not None else -1, "kind": node.kind,
               "visits": node.visits, "score": None if node.score == -math.inf else node.score,
               "locked": node.locked}
        for key in ("label", "angle", "shape_id", "centroid"):
            value = getattr(node, key)
            if value is not None:
                rec[key] = value
        nodes.append(rec)
    doc = {"version": TREE_VERSION, "pose_angles": tree.pose_angles, "categories": tree.categories,
           "k": tree.k, "seed": tree.seed, "nodes": nodes}
    if tree.db_path is not None:
        doc["db"] = tree.db_path
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


_KINDS = {"root", "category", "pose", "cluster", "leaf"}


def deserialize(data: bytes) -> HocTree:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeFormatError(f"malformed tree file at byte {exc.pos}: {exc.msg}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise TreeFormatError("malformed tree file at byte 0: missing version header")
    if doc["version"] != TREE_VERSION:
        raise TreeFormatError(f"unsupported version {doc['version']!r} (expected {TREE_VERSION})")
    try:
        records = doc["nodes"]
        built: list[HocNode] = []
        for i, rec in enumerate(records):
            if rec["kind"] not in _KINDS:
                raise TreeFormatError(f"node {i}: unknown kind {rec['kind']!r}")
            score = rec["score"]
            node = HocNode(rec["kind"], rec.get("label"), rec.get("angle"), rec.get("shape_id"), rec.get("centroid"),
                           visits=int(rec["visits"]), score=-math.inf if score is None else float(score),
                           locked=bool(rec["locked"]))
            parent = rec["parent"]
            if i == 0:
                if parent != -1:
                    raise TreeFormatError("node 0 must be the root")
            else:
                if not 0 <= parent < i:
                    raise TreeFormatError(f"node {i}: parent index {parent} out of order")
                built[parent].children.append(node)
            built.append(node)
    except (KeyError, TypeError) as exc:
        raise TreeFormatError(f"malformed node record: {exc}") from None
    if not built:
        raise TreeFormatError("tree file has no nodes")
    return HocTree(built[0], doc["pose_angles"], doc.get("categories", []), doc.get("k", 5), doc.get("seed", 0),
                   doc.get("db"))


def save_tree(tree: HocTree, path) -> None:
    Path(path).write_bytes(serialize(tree))


def load_tree(path) -> HocTree:
    return deserialize(Path(path).read_bytes())
