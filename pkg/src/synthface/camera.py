"""Pinhole camera: intrinsics from horizontal FOV and sensor width, rays,
projection and camera-relative head pose.

Image origin is the top-left corner, +x right, +y down; pixel (i, j) covers
[i, i+1) x [j, j+1) so its center sits at (i + 0.5, j + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .pose import EulerPose, matrix_to_euler
from .scene import Transform


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    focal_mm: float

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraModel:
    fov_deg: float = 60.0
    sensor_mm: float = 36.0
    width_px: int = 640
    height_px: int = 480
    near_m: float = 0.01
    far_m: float = 5.0
    extrinsics: Transform = field(default_factory=Transform)

    def __post_init__(self):
        if not 0.0 < self.near_m < self.far_m:
            raise ValueError(f"near must be < far and positive (near={self.near_m}, far={self.far_m})")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov_deg must be in (0, 180), got {self.fov_deg}")
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError("resolution must be positive")

    @property
    def position(self) -> np.ndarray:
        return self.extrinsics.translation

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics.rotation

    def camera_to_world(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.extrinsics.rotation
        m[:3, 3] = self.extrinsics.translation
        return m

    def with_resolution(self, width: int, height: int) -> "CameraModel":
        return CameraModel(self.fov_deg, self.sensor_mm, width, height, self.near_m, self.far_m, self.extrinsics)


def intrinsics_from_camera(cam: CameraModel) -> Intrinsics:
    half = math.tan(math.radians(cam.fov_deg) / 2.0)
    fx = (cam.width_px / 2.0) / half
    return Intrinsics(
        fx=fx,
        fy=fx,
        cx=cam.width_px / 2.0,
        cy=cam.height_px / 2.0,
        focal_mm=(cam.sensor_mm / 2.0) / half,
    )


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray


def camera_space_direction(intr: Intrinsics, x: float, y: float) -> np.ndarray:
    d = np.array([(x - intr.cx) / intr.fx, -(y - intr.cy) / intr.fy, -1.0])
    return d / np.linalg.norm(d)


def generate_ray(cam: CameraModel, pixel, jitter=(0.5, 0.5)) -> Ray:
    i, j = pixel
    intr = intrinsics_from_camera(cam)
    d = camera_space_direction(intr, i + jitter[0], j + jitter[1])
    return Ray(cam.position.copy(), cam.rotation @ d)


def project(p_world, cam: CameraModel) -> Optional[tuple[tuple[float, float], float]]:
    """Return ((x, y), planar_depth), or None when the point is behind the camera."""
    intr = intrinsics_from_camera(cam)
    pc = cam.rotation.T @ (np.asarray(p_world, dtype=np.float64) - cam.position)
    if pc[2] >= 0:
        return None
    depth = -pc[2]
    return (intr.cx + intr.fx * pc[0] / depth, intr.cy - intr.fy * pc[1] / depth), float(depth)


def relative_head_pose(head_rotation, cam: CameraModel) -> EulerPose:
    return matrix_to_euler(cam.rotation.T @ np.asarray(head_rotation, dtype=np.float64))


def look_from(target, distance: float, rotation=None) -> Transform:
    """Camera-to-world transform placing the camera ``distance`` meters from
    ``target`` along its own backward (+Z) axis, so ``target`` is on-axis."""
    r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    pos = np.asarray(target, dtype=np.float64) + distance * r[:, 2]
    return Transform(rotation=r, translation=pos)
