import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthface.pose import (
    DEFAULT_EXPRESSIONS,
    EulerPose,
    GimbalError,
    PoseFrame,
    PoseRanges,
    ScheduleError,
    apply_pose,
    blend_morphs,
    euler_to_matrix,
    grid_capacity,
    matrix_to_euler,
    sample_pose_schedule,
)
from synthface.scene import Bone, Mesh, MorphTarget, Rig

yaw_s = st.floats(-179.0, 179.0)
pitch_s = st.floats(-80.0, 80.0)


def rodrigues(axis, deg):
    """Axis-angle rotation, an oracle independent of the package's axis helpers."""
    k = np.asarray(axis, float) / np.linalg.norm(axis)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    a = math.radians(deg)
    return np.eye(3) + math.sin(a) * kx + (1 - math.cos(a)) * kx @ kx


def oracle(yaw, pitch, roll):
    # intrinsic Y, then the rotated X, then the twice-rotated Z
    ry = rodrigues((0, 1, 0), yaw)
    rx = rodrigues(ry @ (1, 0, 0), pitch)
    rz = rodrigues(rx @ ry @ (0, 0, 1), roll)
    return rz @ rx @ ry


def angle_diff(a, b):
    return abs((a - b + 180.0) % 360.0 - 180.0)


def test_zero_pose_is_identity():
    assert np.array_equal(euler_to_matrix(EulerPose(0, 0, 0)), np.eye(3))


def test_yaw_30_by_hand():
    c, s = math.sqrt(3) / 2, 0.5
    np.testing.assert_allclose(euler_to_matrix(EulerPose(30, 0, 0)), [[c, 0, s], [0, 1, 0], [-s, 0, c]], atol=1e-15)


def test_composed_pose_matches_axis_angle_oracle():
    np.testing.assert_allclose(euler_to_matrix(EulerPose(30, 15, -15)), oracle(30, 15, -15), atol=1e-14)


@given(yaw_s, pitch_s, yaw_s)
def test_matches_oracle_everywhere(y, p, r):
    np.testing.assert_allclose(euler_to_matrix(EulerPose(y, p, r)), oracle(y, p, r), atol=1e-12)


@given(st.floats(-30, 30), st.floats(-15, 15), st.floats(-15, 15))
def test_orthonormal_in_working_range(y, p, r):
    m = euler_to_matrix(EulerPose(y, p, r))
    assert np.abs(m.T @ m - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(m) - 1.0) < 1e-9


@pytest.mark.parametrize("pose", [(30, 15, -15), (-30, -15, 15), (0, 0, 0)])
def test_round_trip_examples(pose):
    back = matrix_to_euler(euler_to_matrix(EulerPose(*pose)))
    assert max(abs(a - b) for a, b in zip((back.yaw_deg, back.pitch_deg, back.roll_deg), pose)) < 1e-9


@given(yaw_s, pitch_s, yaw_s)
def test_round_trip_property(y, p, r):
    back = matrix_to_euler(euler_to_matrix(EulerPose(y, p, r)))
    assert angle_diff(back.yaw_deg, y) < 1e-9
    assert abs(back.pitch_deg - p) < 1e-9
    assert angle_diff(back.roll_deg, r) < 1e-9


def test_gimbal_guard():
    with pytest.raises(GimbalError, match="gimbal singularity"):
        matrix_to_euler(rodrigues((1, 0, 0), 89.95))
    with pytest.raises(ValueError):
        EulerPose(0, 90, 0)
    matrix_to_euler(rodrigues((1, 0, 0), 89.8))


# skinning


def head_rig(n, pivot=(0.0, 1.5, 0.0)):
    return Rig([Bone("head", pivot)], [[0, -1, -1, -1]] * n, [[1, 0, 0, 0]] * n)


def test_single_bone_rotation_about_pivot():
    mesh = Mesh("m", [(0.1, 1.5, 0.0)], np.zeros((0, 3), int), normals=[(1.0, 0.0, 0.0)])
    frame = PoseFrame(0, {"head": EulerPose(30, 0, 0)})
    v, n = apply_pose(mesh, head_rig(1), (), frame)
    np.testing.assert_allclose(v[0], [0.1 * math.sqrt(3) / 2, 1.5, -0.05], atol=1e-12)
    np.testing.assert_allclose(v[0], [0.086603, 1.5, -0.05], atol=1e-6)
    np.testing.assert_allclose(n[0], [math.sqrt(3) / 2, 0, -0.5], atol=1e-12)


def test_rest_pose_is_bit_identical():
    rng = np.random.default_rng(1)
    verts = rng.normal(size=(20, 3))
    mesh = Mesh("m", verts, np.zeros((0, 3), int))
    morphs = (MorphTarget("happy", [0, 3], rng.normal(size=(2, 3))),)
    frame = PoseFrame(0, {"head": EulerPose(0, 0, 0)}, {"happy": 0.0})
    v, _ = apply_pose(mesh, head_rig(20), morphs, frame)
    assert v.tobytes() == mesh.vertices.tobytes()


def test_morph_weight_one_adds_delta_exactly():
    verts = np.array([(0.1, 0.2, 0.3), (1.0, 1.0, 1.0)])
    delta = np.array([[0.01, -0.02, 0.005]])
    mesh = Mesh("m", verts, np.zeros((0, 3), int))
    morphs = (MorphTarget("happy", [1], delta),)
    v, _ = apply_pose(mesh, None, morphs, PoseFrame(0, {}, {"happy": 1.0}))
    assert v[1].tolist() == (verts[1] + delta[0]).tolist()
    assert v[0].tolist() == verts[0].tolist()


def test_unknown_names_raise():
    mesh = Mesh("m", [(0, 0, 0)], np.zeros((0, 3), int))
    with pytest.raises(KeyError):
        apply_pose(mesh, head_rig(1), (), PoseFrame(0, {"neck": EulerPose(1, 0, 0)}))
    with pytest.raises(KeyError):
        blend_morphs(mesh.vertices, (), {"sad": 1.0})


def test_parent_composition():
    # shoulder yaw 90 then head (child) pitch; a point on the head follows both
    bones = [Bone("shoulder", (0, 1.35, 0)), Bone("head", (0, 1.5, 0), 0)]
    rig = Rig(bones, [[1, -1, -1, -1]], [[1, 0, 0, 0]])
    p = np.array([0.0, 1.6, 0.1])
    mesh = Mesh("m", [p], np.zeros((0, 3), int))
    frame = PoseFrame(0, {"shoulder": EulerPose(90, 0, 0), "head": EulerPose(0, 20, 0)})
    v, _ = apply_pose(mesh, rig, (), frame)
    # oracle: head about its pivot, then the whole thing about the shoulder
    hp, sp = np.array([0, 1.5, 0]), np.array([0, 1.35, 0])
    q = hp + rodrigues((1, 0, 0), 20) @ (p - hp)
    q = sp + rodrigues((0, 1, 0), 90) @ (q - sp)
    np.testing.assert_allclose(v[0], q, atol=1e-12)


@settings(max_examples=50)
@given(st.permutations([0, 1, 2]), st.floats(-30, 30), st.floats(-15, 15), st.floats(-15, 15))
def test_skinning_invariant_to_influence_order(perm, y, p, r):
    bones = [Bone("a", (0, 0, 0)), Bone("b", (0, 1, 0), 0), Bone("c", (0.2, 1.5, 0), 1)]
    w = [0.2, 0.3, 0.5]
    base_i = [[0, 1, 2, -1]]
    base_w = [w + [0.0]]
    perm_i = [[perm[0], perm[1], perm[2], -1]]
    perm_w = [[w[perm[0]], w[perm[1]], w[perm[2]], 0.0]]
    mesh = Mesh("m", [(0.3, 1.7, 0.2)], np.zeros((0, 3), int), normals=[(0.0, 0.0, 1.0)])
    frame = PoseFrame(0, {"a": EulerPose(y, 0, 0), "b": EulerPose(0, p, 0), "c": EulerPose(0, 0, r)})
    va, na = apply_pose(mesh, Rig(bones, base_i, base_w), (), frame)
    vb, nb = apply_pose(mesh, Rig(bones, perm_i, perm_w), (), frame)
    assert va.tobytes() == vb.tobytes()
    assert na.tobytes() == nb.tobytes()


# schedules


def test_grid_three_yaw_steps():
    ranges = PoseRanges(grid_steps=(3, 1, 1))
    sched = sample_pose_schedule(ranges, 3, mode="grid")
    assert [f.bone_rotations["head"].yaw_deg for f in sched] == [-30.0, 0.0, 30.0]
    assert all(f.camera_distance_m == 0.85 for f in sched)


def test_grid_overflow():
    assert grid_capacity(PoseRanges()) == 45
    with pytest.raises(ScheduleError, match="allow only 45"):
        sample_pose_schedule(PoseRanges(), 46, mode="grid")
    sample_pose_schedule(PoseRanges(), 45, mode="grid")


def test_grid_is_cartesian_product_in_order():
    sched = sample_pose_schedule(PoseRanges(grid_steps=(2, 2, 2)), 8, mode="grid")
    got = [(f.bone_rotations["head"].yaw_deg, f.bone_rotations["head"].pitch_deg, f.bone_rotations["head"].roll_deg) for f in sched]
    expected = [(y, p, r) for y in (-30.0, 30.0) for p in (-15.0, 15.0) for r in (-15.0, 15.0)]
    assert got == expected


@settings(max_examples=25)
@given(st.integers(0, 2**64 - 1))
def test_uniform_samples_stay_in_range(seed):
    sched = sample_pose_schedule(PoseRanges(), 40, seed=seed)
    for f in sched:
        h = f.bone_rotations["head"]
        assert -30 <= h.yaw_deg <= 30 and -15 <= h.pitch_deg <= 15 and -15 <= h.roll_deg <= 15
        assert 0.7 <= f.camera_distance_m <= 1.0


def test_schedule_reproducible_and_prefix_stable():
    a = sample_pose_schedule(PoseRanges(), 20, seed=99)
    b = sample_pose_schedule(PoseRanges(), 20, seed=99)
    c = sample_pose_schedule(PoseRanges(), 5, seed=99)
    assert a == b
    assert a.frames[:5] == c.frames
    assert [f.frame_index for f in a] == list(range(20))


def test_expressions_cycle_by_default():
    sched = sample_pose_schedule(PoseRanges(), 7)
    assert [f.expression_name for f in sched] == list(DEFAULT_EXPRESSIONS) + ["neutral", "sad"]


def test_cross_product_repeats_each_pose_per_expression():
    sched = sample_pose_schedule(PoseRanges(), 6, expressions=("neutral", "happy"), expression_mode="cross_product", seed=3)
    assert [f.expression_name for f in sched] == ["neutral", "happy"] * 3
    for k in range(0, 6, 2):
        assert sched[k].bone_rotations == sched[k + 1].bone_rotations
        assert sched[k].camera_distance_m == sched[k + 1].camera_distance_m
    assert sched[0].bone_rotations != sched[2].bone_rotations


def test_presets_become_morph_weights():
    presets = {"neutral": {"happy": 0.0}, "happy": {"happy": 1.0}}
    sched = sample_pose_schedule(PoseRanges(), 2, expressions=("neutral", "happy"), presets=presets)
    assert sched[1].morph_weights == {"happy": 1.0}


def test_multiple_bones_use_separate_channels():
    sched = sample_pose_schedule(PoseRanges(), 3, bones=("head", "shoulder"), seed=5)
    for f in sched:
        assert f.bone_rotations["head"] != f.bone_rotations["shoulder"]
