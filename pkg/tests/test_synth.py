import math

import numpy as np
import pytest

from hocsearch.geometry import OrientedBox
from hocsearch.mcts import yaw_error_deg
from hocsearch.objective import make_objective, seed_key
from hocsearch.synth import (FAMILIES, SceneSpec, ShapeDatabase, candidate_pose, gen_database, gen_scene, load_scene,
                             perturb_box, quarter_turns, save_scene)


def test_database_is_reproducible():
    a, b = gen_database(count=15, seed=3), gen_database(count=15, seed=3)
    assert [r.mesh_hash() for r in a] == [r.mesh_hash() for r in b]
    assert np.array_equal(a.descriptor_matrix(), b.descriptor_matrix())


def test_seeds_change_meshes():
    a, b = gen_database(count=15, seed=3), gen_database(count=15, seed=4)
    assert any(x.mesh_hash() != y.mesh_hash() for x, y in zip(a, b))


def test_single_family_labels():
    db = gen_database(families=("chair",), count=10)
    assert {r.category for r in db} == {"chair"}


@pytest.mark.parametrize("family", FAMILIES)
def test_shapes_fill_the_unit_cube(family):
    for rec in gen_database(families=(family,), count=4, seed=2):
        lo, hi = rec.mesh.bounds()
        assert np.allclose(lo, -0.5) and np.allclose(hi, 0.5)
        assert rec.mesh.triangle_areas().min() > 0


def test_database_save_load(tmp_path, small_db):
    small_db.save(tmp_path / "db")
    again = ShapeDatabase.load(tmp_path / "db")
    assert again.ids == small_db.ids
    assert [r.mesh_hash() for r in again] == [r.mesh_hash() for r in small_db]
    assert np.array_equal(again.descriptor_matrix(), small_db.descriptor_matrix())


def test_missing_database(tmp_path):
    with pytest.raises(FileNotFoundError, match="db.json"):
        ShapeDatabase.load(tmp_path)


def test_scene_has_requested_frames(small_db):
    scene = gen_scene(small_db, SceneSpec(gt_shape=1, seed=4, frames=14))
    assert len(scene.frames) == 14
    assert len(gen_scene(small_db, SceneSpec(gt_shape=1, seed=4, frames=5)).frames) == 5


def test_dropout_thins_the_cloud(small_db):
    full = gen_scene(small_db, SceneSpec(gt_shape=2, seed=8))
    half = gen_scene(small_db, SceneSpec(gt_shape=2, seed=8, dropout=0.5))
    assert abs(len(half.target_points) / len(full.target_points) - 0.5) <= 0.05


def test_missing_ground_truth_shape(small_db):
    with pytest.raises(KeyError):
        gen_scene(small_db, SceneSpec(gt_shape=999))


@pytest.mark.parametrize("kw", [dict(sigma=-0.1), dict(dropout=1.0), dict(occluders=1.0), dict(frames=0)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        SceneSpec(gt_shape=0, **kw)


def test_scene_generation_is_reproducible(small_db):
    spec = SceneSpec(gt_shape=4, seed=6, sigma=0.01, occluders=0.3, dropout=0.1)
    a, b = gen_scene(small_db, spec), gen_scene(small_db, spec)
    assert np.array_equal(a.target_points, b.target_points)
    assert all(np.array_equal(x.sensor_depth.depth, y.sensor_depth.depth, equal_nan=True)
               for x, y in zip(a.frames, b.frames))


def test_occluders_carve_the_target_mask(small_db):
    plain = gen_scene(small_db, SceneSpec(gt_shape=4, seed=6))
    occluded = gen_scene(small_db, SceneSpec(gt_shape=4, seed=6, occluders=0.5))
    assert occluded.stack().target_count.sum() < plain.stack().target_count.sum()


def test_sensor_noise_only_on_valid_pixels(small_db):
    scene = gen_scene(small_db, SceneSpec(gt_shape=4, seed=6, sigma=0.02))
    st_ = scene.stack()
    assert np.array_equal(st_.scan_valid, st_.sensor_valid)
    resid = (st_.sensor - st_.scan)[st_.scan_valid]
    assert abs(resid.std() - 0.02) < 0.002


def test_ground_truth_box_yields_ground_truth_pose(small_db):
    for seed in range(8):
        scene = gen_scene(small_db, SceneSpec(gt_shape=seed % 12, seed=seed))
        poses = [candidate_pose(scene.gt_box, a) for a in (0, 90, 180, 270)]
        best = min(poses, key=lambda p: yaw_error_deg(p.yaw, scene.gt_pose.yaw))
        assert np.allclose(best.as_vector()[:3], scene.gt_pose.as_vector()[:3])
        assert yaw_error_deg(best.yaw, scene.gt_pose.yaw) < 1e-9


def test_scene_roundtrip(tmp_path, small_db, noisy_scene):
    save_scene(noisy_scene, tmp_path / "s")
    again = load_scene(tmp_path / "s")
    assert np.array_equal(again.target_points, noisy_scene.target_points)
    assert again.box == noisy_scene.box and again.gt_pose == noisy_scene.gt_pose
    obj_a, obj_b = make_objective("rac", noisy_scene), make_objective("rac", again)
    key = seed_key(2, 90.0)
    pose = candidate_pose(noisy_scene.box, 90.0)
    assert obj_a(small_db[2], pose, key) == obj_b(small_db[2], pose, key)


def test_quarter_turns():
    assert [quarter_turns(a) for a in (0, 45.1, 90, 180, 270, 315, 360)] == [0, 1, 1, 2, 3, 0, 0]


def test_candidate_pose_swaps_footprint_on_odd_turns():
    box = OrientedBox((0, 0, 0), (2.0, 1.0, 0.5), 0.3)
    assert candidate_pose(box, 0).scale == (2.0, 1.0, 0.5)
    assert candidate_pose(box, 90).scale == (1.0, 2.0, 0.5)
    assert math.isclose(candidate_pose(box, 90).yaw, 0.3 + math.pi / 2)


def test_perturb_zero_is_identity():
    box = OrientedBox((1, 2, 0.5), (0.7, 0.4, 1.0), 0.8)
    assert perturb_box(box, seed=3) == box


def test_axis_aligned_mode_drops_yaw():
    box = OrientedBox((1, 2, 0.5), (0.7, 0.4, 1.0), math.radians(37))
    out = perturb_box(box, axis_aligned=True, seed=1)
    assert out.yaw == 0.0
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    assert np.allclose(out.extents[:2], [0.7 * c + 0.4 * s, 0.7 * s + 0.4 * c])


def test_perturbation_bounds_monte_carlo():
    box = OrientedBox((0, 0, 0.5), (0.8, 0.5, 1.0), 0.0)
    shifts = np.array([np.subtract(perturb_box(box, trans_frac=0.1, seed=s).center, box.center)
                       for s in range(1000)])
    rel = np.abs(shifts) / np.array(box.extents)
    assert rel.max() <= 0.1
    assert np.allclose(rel.mean(axis=0), 0.05, atol=0.005)
    yaws = [perturb_box(box, yaw_max=0.2, seed=s).yaw for s in range(1000)]
    assert max(np.abs(yaws)) <= 0.2
    with pytest.raises(ValueError):
        perturb_box(box, yaw_max=-1)
