"""Head pose math, morph blending, linear blend skinning and pose schedules.

Euler convention: R = R_y(yaw) @ R_x(pitch) @ R_z(roll), i.e. intrinsic
yaw -> pitch -> roll about +Y, +X, +Z. Manifests record it as ``YXZ-intrinsic``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import rng
from .scene import Mesh, MorphTarget, Rig

EULER_CONVENTION = "YXZ-intrinsic"
DEFAULT_EXPRESSIONS = ("neutral", "sad", "angry", "happy", "scared")
GIMBAL_GUARD_DEG = 0.1

# Counter-RNG channel numbers; bone b axis a uses 1 + 3*b + a.
CH_DISTANCE = 0


class GimbalError(ValueError):
    pass


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class EulerPose:
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0
    roll_deg: float = 0.0

    def __post_init__(self):
        if not abs(self.pitch_deg) < 90.0:
            raise ValueError(f"|pitch| must be < 90 degrees, got {self.pitch_deg}")

    def as_dict(self) -> dict:
        return {"yaw": self.yaw_deg, "pitch": self.pitch_deg, "roll": self.roll_deg}

    @property
    def is_zero(self) -> bool:
        return self.yaw_deg == 0.0 and self.pitch_deg == 0.0 and self.roll_deg == 0.0


def rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(p: EulerPose) -> np.ndarray:
    y, x, z = (math.radians(a) for a in (p.yaw_deg, p.pitch_deg, p.roll_deg))
    cy, sy = math.cos(y), math.sin(y)
    cx, sx = math.cos(x), math.sin(x)
    cz, sz = math.cos(z), math.sin(z)
    return np.array(
        [
            [cy * cz + sy * sx * sz, sy * sx * cz - cy * sz, sy * cx],
            [cx * sz, cx * cz, -sx],
            [cy * sx * sz - sy * cz, sy * sz + cy * sx * cz, cy * cx],
        ]
    )


def matrix_to_euler(r) -> EulerPose:
    r = np.asarray(r, dtype=np.float64)
    pitch = math.degrees(math.atan2(-r[1, 2], math.hypot(r[1, 0], r[1, 1])))
    if abs(abs(pitch) - 90.0) < GIMBAL_GUARD_DEG:
        raise GimbalError(f"gimbal singularity (pitch {pitch:.4f} deg)")
    yaw = math.degrees(math.atan2(r[0, 2], r[2, 2]))
    roll = math.degrees(math.atan2(r[1, 0], r[1, 1]))
    return EulerPose(yaw, pitch, roll)


@dataclass(frozen=True)
class PoseFrame:
    frame_index: int
    bone_rotations: Mapping[str, EulerPose] = field(default_factory=dict)
    morph_weights: Mapping[str, float] = field(default_factory=dict)
    camera_distance_m: float = 0.85
    expression_name: str = "neutral"


@dataclass(frozen=True)
class PoseSchedule:
    frames: tuple[PoseFrame, ...]
    seed: int
    mode: str

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, k) -> PoseFrame:
        return self.frames[k]


@dataclass(frozen=True)
class PoseRanges:
    yaw: tuple[float, float] = (-30.0, 30.0)
    pitch: tuple[float, float] = (-15.0, 15.0)
    roll: tuple[float, float] = (-15.0, 15.0)
    distance: tuple[float, float] = (0.7, 1.0)
    # Grid mode: inclusive linspace step counts per axis (yaw, pitch, roll).
    grid_steps: tuple[int, int, int] = (5, 3, 3)

    def angle_ranges(self):
        return (self.yaw, self.pitch, self.roll)


def _grid_axes(ranges: PoseRanges) -> list[np.ndarray]:
    # a single step sits at the range midpoint, like the grid distance
    return [
        np.linspace(lo, hi, n) if n > 1 else np.array([0.5 * (lo + hi)])
        for (lo, hi), n in zip(ranges.angle_ranges(), ranges.grid_steps)
    ]


def grid_capacity(ranges: PoseRanges, n_bones: int = 1) -> int:
    return math.prod(ranges.grid_steps) ** n_bones


def sample_pose_schedule(
    ranges: PoseRanges,
    count: int,
    mode: str = "uniform_random",
    seed: int = 0,
    bones: Sequence[str] = ("head",),
    expressions: Sequence[str] = DEFAULT_EXPRESSIONS,
    expression_mode: str = "cycle",
    presets: Optional[Mapping[str, Mapping[str, float]]] = None,
) -> PoseSchedule:
    """Deterministic schedule of ``count`` frames.

    In ``cross_product`` expression mode every pose is repeated once per
    expression, so frame k uses pose k // len(expressions).
    """
    if count < 1:
        raise ScheduleError("count must be >= 1")
    if not expressions:
        raise ScheduleError("at least one expression is required")
    if expression_mode not in ("cycle", "cross_product"):
        raise ScheduleError(f"unknown expression mode {expression_mode!r}")
    n_expr = len(expressions)
    n_poses = count if expression_mode == "cycle" else -(-count // n_expr)

    if mode == "grid":
        cap = grid_capacity(ranges, len(bones))
        if n_poses > cap:
            raise ScheduleError(
                f"grid mode needs {n_poses} poses but the axis steps "
                f"{'x'.join(map(str, ranges.grid_steps))} allow only {cap}"
            )
        axes = _grid_axes(ranges) * len(bones)
        grid = list(itertools.islice(itertools.product(*axes), n_poses))
    elif mode != "uniform_random":
        raise ScheduleError(f"unknown schedule mode {mode!r}")

    frames = []
    for k in range(count):
        if expression_mode == "cycle":
            pose_k, expr = k, expressions[k % n_expr]
        else:
            pose_k, expr = k // n_expr, expressions[k % n_expr]
        rotations = {}
        if mode == "grid":
            angles = grid[pose_k]
            for b, name in enumerate(bones):
                yaw, pitch, roll = (float(a) for a in angles[3 * b : 3 * b + 3])
                rotations[name] = EulerPose(yaw, pitch, roll)
            distance = 0.5 * (ranges.distance[0] + ranges.distance[1])
        else:
            for b, name in enumerate(bones):
                yaw, pitch, roll = (
                    rng.uniform(lo, hi, seed, pose_k, 1 + 3 * b + a)
                    for a, (lo, hi) in enumerate(ranges.angle_ranges())
                )
                rotations[name] = EulerPose(yaw, pitch, roll)
            distance = rng.uniform(*ranges.distance, seed, pose_k, CH_DISTANCE)
        weights = dict((presets or {}).get(expr, {}))
        frames.append(
            PoseFrame(
                frame_index=k,
                bone_rotations=rotations,
                morph_weights=weights,
                camera_distance_m=distance,
                expression_name=expr,
            )
        )
    return PoseSchedule(tuple(frames), seed, mode)


def bone_world_transforms(rig: Rig, rotations: Mapping[str, EulerPose]):
    """Per-bone (R, t) in model space, each rotating about its rest pivot and
    composed through the parent chain."""
    unknown = set(rotations) - {b.name for b in rig.bones}
    if unknown:
        raise KeyError(f"unknown bone(s) {sorted(unknown)}")
    n = len(rig.bones)
    out: list = [None] * n

    def resolve(i):
        if out[i] is not None:
            return out[i]
        b = rig.bones[i]
        pose = rotations.get(b.name)
        r = np.eye(3) if pose is None or pose.is_zero else euler_to_matrix(pose)
        p = np.asarray(b.pivot, dtype=np.float64)
        t = p - r @ p
        if b.parent is not None:
            pr, pt = resolve(b.parent)
            r, t = pr @ r, pr @ t + pt
        out[i] = (r, t)
        return out[i]

    for i in range(n):
        resolve(i)
    return out


def blend_morphs(vertices: np.ndarray, morphs: Sequence[MorphTarget], weights: Mapping[str, float]) -> np.ndarray:
    by_name = {m.name: m for m in morphs}
    unknown = set(weights) - set(by_name)
    if unknown:
        raise KeyError(f"unknown morph target(s) {sorted(unknown)}")
    v = np.array(vertices, dtype=np.float64, copy=True)
    for name in sorted(weights):
        w = float(weights[name])
        if w == 0.0:
            continue
        m = by_name[name]
        np.add.at(v, m.indices, w * m.deltas)
    return v


def apply_pose(mesh: Mesh, rig: Optional[Rig], morphs: Sequence[MorphTarget], frame: PoseFrame):
    """Deform a mesh for one frame; returns (vertices, normals) in model space."""
    v = blend_morphs(mesh.vertices, morphs, frame.morph_weights)
    n = None if mesh.normals is None else np.array(mesh.normals, copy=True)
    if rig is None:
        if frame.bone_rotations:
            raise KeyError(f"mesh {mesh.name!r} has no rig for bones {sorted(frame.bone_rotations)}")
        return v, n
    transforms = bone_world_transforms(rig, frame.bone_rotations)
    if all(np.array_equal(r, np.eye(3)) and not t.any() for r, t in transforms):
        return v, n

    rs = np.stack([r for r, _ in transforms])
    ts = np.stack([t for _, t in transforms])
    # Canonical slot order (by bone index) keeps the sum independent of how
    # the influences were listed.
    idx = np.where(rig.bone_weights > 0, rig.bone_indices, np.iinfo(np.int64).max)
    order = np.argsort(idx, axis=1, kind="stable")
    bi = np.take_along_axis(rig.bone_indices, order, axis=1)
    bw = np.take_along_axis(rig.bone_weights, order, axis=1)

    out_v = np.zeros_like(v)
    blend_r = np.zeros((len(v), 3, 3))
    for slot in range(bi.shape[1]):
        w = bw[:, slot]
        live = w > 0
        if not live.any():
            continue
        b = bi[live, slot]
        out_v[live] += w[live, None] * (np.einsum("nij,nj->ni", rs[b], v[live]) + ts[b])
        blend_r[live] += w[live, None, None] * rs[b]
    if n is not None:
        n = np.einsum("nij,nj->ni", blend_r, n)
        length = np.linalg.norm(n, axis=1, keepdims=True)
        n = np.divide(n, length, out=np.zeros_like(n), where=length > 0)
    return out_v, n
