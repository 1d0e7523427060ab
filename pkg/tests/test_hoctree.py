import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from hocsearch.hoctree import (TreeFormatError, build_tree, candidate_of, deserialize, load_tree, save_tree,
                               serialize)
from hocsearch.synth import candidate_pose, gen_database


@pytest.fixture(scope="module")
def mixed_db():
    return gen_database(count=23, seed=4)


def test_pose_branches_hold_every_shape_once(mixed_db):
    tree = build_tree(mixed_db, seed=1)
    assert [p.angle for p in tree.pose_nodes()] == [0.0, 90.0, 180.0, 270.0]
    for pose in tree.pose_nodes():
        assert sorted(l.shape_id for l in pose.leaves()) == mixed_db.ids
    assert tree.leaf_count() == 4 * len(mixed_db)


def test_category_level(mixed_db):
    tree = build_tree(mixed_db, with_category_level=True, seed=1)
    cats = mixed_db.by_category()
    assert [c.label for c in tree.root.children] == sorted(cats)
    for cat in tree.root.children:
        assert all(p.kind == "pose" for p in cat.children)
        for pose in cat.children:
            assert sorted(l.shape_id for l in pose.leaves()) == sorted(cats[cat.label])


def test_single_shape_category_has_one_leaf_per_pose():
    db = gen_database(families=("chair",), count=1)
    tree = build_tree(db)
    for pose in tree.pose_nodes():
        assert len(pose.children) == 1 and pose.children[0].is_leaf


def test_indices_and_parents(mixed_db):
    tree = build_tree(mixed_db, k=3)
    for i, node in enumerate(tree.nodes):
        assert node.index == i
        for child in node.children:
            assert child.parent is node and child.index > i
        if node.kind in ("pose", "cluster", "leaf"):
            assert node.pose_node.kind == "pose"
            assert node.pose_node in node.path_from_root()


def test_candidate_of_uses_branch_angle(mixed_db, clean_scene):
    tree = build_tree(mixed_db)
    leaf = tree.pose_nodes()[2].leaves()[0]
    cand = candidate_of(leaf, clean_scene.box, mixed_db)
    assert cand.pose == candidate_pose(clean_scene.box, 180.0)
    assert cand.shape.shape_id == leaf.shape_id


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 30), st.integers(2, 6), st.integers(0, 50), st.booleans())
def test_serialize_roundtrip(count, k, seed, categories):
    db = gen_database(count=count, seed=seed)
    tree = build_tree(db, k=k, seed=seed, with_category_level=categories)
    # give some nodes statistics so they take part in the comparison
    for i, node in enumerate(tree.nodes[::3]):
        node.visits, node.score, node.locked = i + 1, -0.125 * i, i % 2 == 0
    again = deserialize(serialize(tree))
    assert again.signature() == tree.signature()
    assert serialize(again) == serialize(tree)


def test_save_load(tmp_path, mixed_db):
    tree = build_tree(mixed_db)
    tree.db_path = "../db"
    save_tree(tree, tmp_path / "t.json")
    again = load_tree(tmp_path / "t.json")
    assert again.signature() == tree.signature() and again.db_path == "../db"


def test_malformed_file_reports_byte_offset():
    with pytest.raises(TreeFormatError, match="at byte 9"):
        deserialize(b'{"nodes":,}')


def test_unsupported_version(mixed_db):
    doc = json.loads(serialize(build_tree(mixed_db)))
    doc["version"] = 99
    with pytest.raises(TreeFormatError, match="unsupported version"):
        deserialize(json.dumps(doc).encode())


def test_out_of_order_parent(mixed_db):
    doc = json.loads(serialize(build_tree(mixed_db)))
    doc["nodes"][3]["parent"] = 7
    with pytest.raises(TreeFormatError, match="out of order"):
        deserialize(json.dumps(doc).encode())


def test_reset_stats(mixed_db):
    tree = build_tree(mixed_db)
    tree.nodes[4].visits, tree.nodes[4].score, tree.nodes[4].locked = 3, 1.0, True
    tree.reset_stats()
    assert all(n.visits == 0 and n.score == -math.inf and not n.locked for n in tree.nodes)


def test_empty_db_and_angles_rejected(mixed_db):
    with pytest.raises(ValueError):
        build_tree(mixed_db, pose_angles=())
