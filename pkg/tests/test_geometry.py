import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hocsearch.geometry import (KdIndex, OrientedBox, Pose, TriangleMesh, apply_pose, chamfer, euler_xyz_matrix,
                                make_rng, sample_count, sample_surface, single_direction_chamfer, surface_param)
from hocsearch.synth import cuboid

coords = st.floats(-10, 10, allow_nan=False, width=64)
angles = st.floats(-math.pi, math.pi, allow_nan=False)
clouds = st.integers(1, 200).flatmap(lambda n: arrays(np.float64, (n, 3), elements=coords))


def brute_sdc(p, q):
    d = np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2))
    return d.min(axis=1).mean()


@given(angles, angles, angles)
def test_rotation_is_proper(rx, ry, rz):
    rot = euler_xyz_matrix(rx, ry, rz)
    assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(rot), 1.0)


def test_rotation_order_is_z_after_x():
    rot = euler_xyz_matrix(math.pi / 2, 0.0, math.pi / 2)
    # x-rotation first sends +y to +z; the z-rotation leaves +z alone
    assert np.allclose(rot @ [0, 1, 0], [0, 0, 1])


@given(st.tuples(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.01, 5)), st.tuples(angles, angles, angles),
       st.tuples(coords, coords, coords))
def test_pose_vector_and_dict_roundtrip(scale, rot, trans):
    pose = Pose(scale, rot, trans)
    assert Pose.from_vector(pose.as_vector()) == pose
    assert Pose.from_dict(pose.to_dict()) == pose


@pytest.mark.parametrize("scale", [(0, 1, 1), (1, -1, 1)])
def test_pose_rejects_bad_scale(scale):
    with pytest.raises(ValueError):
        Pose(scale)


def test_apply_pose_scales_then_rotates_then_translates():
    pose = Pose((2, 1, 1), (0, 0, math.pi / 2), (1, 0, 0))
    assert np.allclose(apply_pose(pose, [[1, 0, 0]]), [[1, 2, 0]])


def test_box_pose_places_unit_cube():
    box = OrientedBox((1, 2, 0.5), (2.0, 1.0, 1.0), math.pi / 2)
    corners = apply_pose(box.pose(), [[0.5, 0.5, 0.5], [-0.5, -0.5, -0.5]])
    assert np.allclose(corners, [[0.5, 3.0, 1.0], [1.5, 1.0, 0.0]])
    assert np.allclose(box.to_local(corners), [[1.0, 0.5, 0.5], [-1.0, -0.5, -0.5]])


@pytest.mark.parametrize("extents, expected", [((1, 1, 1), 25000), ((0.5, 0.5, 0.4), 2500), ((0.1, 0.1, 0.1), 64)])
def test_sample_count_rule(extents, expected):
    assert sample_count(OrientedBox((0, 0, 0), extents)) == expected


def test_samples_lie_on_the_surface():
    mesh = cuboid((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    pts = sample_surface(mesh, OrientedBox((0, 0, 0), (1, 1, 1)), m=2000, seed=3)
    assert len(pts) == 2000
    on_face = np.isclose(np.abs(pts), 0.5).any(axis=1)
    assert on_face.all() and (np.abs(pts) <= 0.5 + 1e-12).all()


def test_area_weighting():
    # two disjoint triangles with area ratio 1:3
    verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 0, 0], [8, 0, 0], [5, 1, 0]]
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    param = surface_param(mesh, 40000, make_rng(0))
    assert abs(np.mean(param.tri_index == 0) - 0.25) < 0.01


def test_sampling_respects_pose_scale():
    mesh = cuboid((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    pts = surface_param(mesh, 30000, make_rng(1), scale=(4, 1, 1)).points(mesh)
    # stretched along x, the two x faces carry 2 of 18 area units
    assert abs(np.mean(np.isclose(np.abs(pts[:, 0]), 0.5)) - 2 / 18) < 0.01


def test_sampling_is_seeded():
    mesh = cuboid((0, 0, 0), (1, 2, 3))
    box = OrientedBox((0, 0, 0), (1, 1, 1))
    assert np.array_equal(sample_surface(mesh, box, seed=5), sample_surface(mesh, box, seed=5))
    assert not np.array_equal(sample_surface(mesh, box, seed=5), sample_surface(mesh, box, seed=6))


@settings(max_examples=60, deadline=None)
@given(clouds, clouds)
def test_chamfer_matches_brute_force(p, q):
    assert math.isclose(single_direction_chamfer(p, q), brute_sdc(p, q), rel_tol=1e-12, abs_tol=1e-300)
    assert math.isclose(chamfer(p, q), brute_sdc(p, q) + brute_sdc(q, p), rel_tol=1e-12, abs_tol=1e-300)


@settings(max_examples=60, deadline=None)
@given(clouds, clouds)
def test_chamfer_symmetry_and_decomposition(p, q):
    assert chamfer(p, q) == chamfer(q, p)
    assert chamfer(p, q) == single_direction_chamfer(p, q) + single_direction_chamfer(q, p)


@given(clouds)
def test_chamfer_of_identical_clouds_is_zero(p):
    assert chamfer(p, p) == 0.0


@pytest.mark.parametrize("spread", [0.05, 1.0])
def test_translation_shows_up_in_chamfer(rng, spread):
    p = rng.uniform(-spread / 2, spread / 2, (300, 3))
    d = single_direction_chamfer(p + [10, 0, 0], p)
    assert 10 - spread <= d <= 10
    if spread <= 0.1:
        assert abs(d - 10) < 0.1


def test_empty_clouds_raise():
    with pytest.raises(ValueError, match="empty"):
        chamfer(np.zeros((0, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError, match="empty"):
        single_direction_chamfer(np.ones((2, 3)), [])
    with pytest.raises(ValueError):
        KdIndex(np.zeros((0, 3)))


def test_non_finite_points_raise():
    with pytest.raises(ValueError, match="non-finite"):
        chamfer([[np.nan, 0, 0]], [[0, 0, 0]])


def test_kd_index_returns_nearest(rng):
    pts = rng.normal(size=(100, 3))
    dist, idx = KdIndex(pts).query(pts[[3, 50]] + 1e-9)
    assert list(idx) == [3, 50] and (dist < 1e-8).all()
