"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``.
"""

import hashlib
import io
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import OpenEXR
import pytest
from PIL import Image

from conftest import camera_on_axis, occluder_scene, plane_scene, sphere_scene
from synthface.assets import load_scene_config
from synthface.camera import CameraModel, generate_ray, intrinsics_from_camera, look_from, project
from synthface.dataset import DatasetJob, pose_ranges, preview_frame, read_config, run_job
from synthface.demo import write_demo
from synthface.outputs import depth_to_vis, read_exr_depth, write_png_rgb
from synthface.pose import EulerPose, euler_to_matrix, matrix_to_euler, sample_pose_schedule
from synthface.render import RenderSettings, prepare_scene, render_frame
from synthface.scene import Light, Material, Transform


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def run(n, title):
        detail = {}
        t0 = time.perf_counter()
        status = "FAIL"
        try:
            yield detail
            status = "PASS"
        finally:
            extra = ", ".join(f"{k}={v}" for k, v in detail.items())
            with capsys.disabled():
                print(f"\n{status} criterion {n}: {title} ({extra}; {time.perf_counter() - t0:.1f} s)")

    return run


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file() and p.name != "summary.json":  # summary holds wall time
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Two identities x three frames at 64x48, 64 spp, rendered with one worker."""
    src = tmp_path_factory.mktemp("scene")
    scene = write_demo(src, identities=2, resolution=(64, 48), spp=64, count=3)
    out = tmp_path_factory.mktemp("run1")
    t0 = time.perf_counter()
    summary = run_job(DatasetJob(read_config(scene), out, workers=1))
    return scene, out, summary, time.perf_counter() - t0


def test_c1_default_parameters(criterion, tmp_path):
    with criterion(1, "default parameters") as d:
        cfg = load_scene_config(json.dumps({"assets": {"identities": [{"name": "a", "mesh": "a.obj"}]}}))
        c = cfg.camera
        cam = CameraModel(fov_deg=c.fov_deg, sensor_mm=c.sensor_mm, near_m=c.near_m, far_m=c.far_m, width_px=c.resolution[0], height_px=c.resolution[1])
        k = intrinsics_from_camera(cam)
        expected_f = (640 / 2) / math.tan(math.radians(60) / 2)
        d["fx"] = f"{k.fx:.4f}"
        assert c.resolution == (640, 480)
        assert abs(k.fx - expected_f) / expected_f < 1e-6 and abs(k.fy - expected_f) / expected_f < 1e-6
        assert abs(k.fx - 554.2563) / 554.2563 < 1e-6
        assert (c.near_m, c.far_m) == (0.01, 5.0)

        sched = sample_pose_schedule(pose_ranges(cfg), 1000, seed=cfg.seed)
        heads = np.array([[f.bone_rotations["head"].yaw_deg, f.bone_rotations["head"].pitch_deg, f.bone_rotations["head"].roll_deg] for f in sched])
        dist = np.array([f.camera_distance_m for f in sched])
        d["frames"] = len(sched)
        assert len(sched) == 1000
        assert np.all(np.abs(heads[:, 0]) <= 30) and np.all(np.abs(heads[:, 1:]) <= 15)
        assert np.all((dist >= 0.7) & (dist <= 1.0))

        # a real frame from a config that leaves the resolution at its default
        scene = write_demo(tmp_path, identities=1, spp=1, count=1)
        doc = json.loads(Path(scene).read_text())
        doc["camera"].pop("resolution")
        doc["render"]["max_bounces"] = 1
        Path(scene).write_text(json.dumps(doc))
        preview_frame(read_config(scene), 0, 0, out_root=tmp_path / "out")
        size = Image.open(tmp_path / "out/id000/frame_00000.png").size
        d["image"] = f"{size[0]}x{size[1]}"
        assert size == (640, 480)
        assert read_exr_depth((tmp_path / "out/id000/frame_00000.exr").read_bytes()).shape == (480, 640)


def test_c2_analytic_depth(criterion):
    with criterion(2, "analytic depth oracle") as d:
        t0 = time.perf_counter()
        s = RenderSettings(samples_per_pixel=1, passes=("depth", "id"))
        plane = render_frame(plane_scene(-1.0), camera_on_axis(width=64, height=48), s).depth
        d["plane_err"] = f"{np.abs(plane - 1.0).max():.2e}"
        assert np.all(np.abs(plane - 1.0) <= 1e-4)
        # odd width/height put a pixel center on the optical axis
        sphere = render_frame(sphere_scene(), camera_on_axis(width=65, height=49), s).depth
        d["sphere_center"] = f"{sphere[24, 32]:.6f}"
        assert abs(sphere[24, 32] - 0.8) <= 1e-4
        far = render_frame(plane_scene(-6.0), camera_on_axis(width=64, height=48), s)
        assert np.all(far.depth == np.inf) and np.all(far.id == 0)
        assert time.perf_counter() - t0 < 10


def test_c3_ray_projection_round_trip(criterion):
    with criterion(3, "ray/projection round trip") as d:
        rng = np.random.default_rng(2024)
        cam = CameraModel(extrinsics=Transform(euler_to_matrix(EulerPose(12, -7, 3)), (0.1, 1.5, 0.8)))
        pix = np.stack([rng.integers(0, 640, 10000), rng.integers(0, 480, 10000)], 1)
        jit = rng.random((10000, 2))
        ts = rng.uniform(0.02, 4.9, 10000)
        t0 = time.perf_counter()
        worst = 0.0
        for (i, j), (ju, jv), t in zip(pix, jit, ts):
            r = generate_ray(cam, (int(i), int(j)), (ju, jv))
            (x, y), _ = project(r.origin + t * r.direction, cam)
            worst = max(worst, abs(x - (i + ju)), abs(y - (j + jv)))
        elapsed = time.perf_counter() - t0
        d["max_px_err"] = f"{worst:.2e}"
        d["loop_s"] = f"{elapsed:.2f}"
        assert worst < 1e-6
        assert elapsed < 1.0


def test_c4_rotation_suite(criterion):
    with criterion(4, "rotation round trip") as d:
        rng = np.random.default_rng(7)
        poses = np.column_stack([rng.uniform(-180, 180, 10000), rng.uniform(-80, 80, 10000), rng.uniform(-180, 180, 10000)])
        t0 = time.perf_counter()
        worst_deg, worst_orth = 0.0, 0.0
        for y, p, r in poses:
            m = euler_to_matrix(EulerPose(y, p, r))
            back = matrix_to_euler(m)
            for a, b in ((back.yaw_deg, y), (back.pitch_deg, p), (back.roll_deg, r)):
                worst_deg = max(worst_deg, abs((a - b + 180.0) % 360.0 - 180.0))
            worst_orth = max(worst_orth, np.abs(m.T @ m - np.eye(3)).max())
        elapsed = time.perf_counter() - t0
        d["max_deg_err"] = f"{worst_deg:.2e}"
        d["max_orth_err"] = f"{worst_orth:.2e}"
        d["loop_s"] = f"{elapsed:.2f}"
        assert worst_deg < 1e-9 and worst_orth < 1e-9
        assert elapsed < 1.0


def test_c5_white_furnace(criterion):
    with criterion(5, "white furnace") as d:
        t0 = time.perf_counter()
        mat = Material("grey", (0.5, 0.5, 0.5), specular=0.0)
        # the sphere fills the frame, so every pixel sees albedo 0.5 under unit radiance
        s = sphere_scene((0, 0, -1.5), 1.0, 48, 96, material=mat, background=(1.0, 1.0, 1.0))
        fb = render_frame(s, camera_on_axis(width=64, height=48), RenderSettings(samples_per_pixel=1024, max_bounces=64, seed=1))
        assert np.all(fb.id == 1)
        lum = fb.rgb.mean(axis=2)
        mean_err = np.abs(lum - 0.5).mean() / 0.5
        d["mean"] = f"{lum.mean():.5f}"
        d["mean_pixel_err"] = f"{100 * mean_err:.3f}%"
        assert mean_err < 0.02
        assert time.perf_counter() - t0 < 120


def test_c6_point_light_radiometry(criterion):
    with criterion(6, "point-light radiometry") as d:
        rho, intensity = 0.5, 1.0
        mat = Material("grey", (rho, rho, rho), specular=0.0)
        got = {}
        for dist in (1.0, 2.0):
            # light at the camera, plane perpendicular to the axis; the center pixel sees normal incidence
            s = plane_scene(-dist, material=mat, lights=[Light("point", intensity, position=(0, 0, 0))])
            fb = render_frame(s, camera_on_axis(width=65, height=49), RenderSettings(samples_per_pixel=16, max_bounces=1, seed=2))
            got[dist] = float(fb.rgb[24, 32].mean())
            exact = rho / math.pi * intensity / dist**2
            d[f"L@{dist:g}m"] = f"{got[dist]:.5f}/{exact:.5f}"
            assert abs(got[dist] - exact) / exact < 0.02
        ratio = got[1.0] / got[2.0]
        d["ratio"] = f"{ratio:.4f}"
        assert abs(ratio - 4.0) / 4.0 < 0.02


def test_c7_determinism(criterion, dataset, tmp_path):
    with criterion(7, "determinism across reruns and workers") as d:
        scene, first, summary, elapsed = dataset
        assert summary.frames_rendered == 6 and not summary.failures
        again = tmp_path / "rerun"
        run_job(DatasetJob(read_config(scene), again, workers=1))
        multi = tmp_path / "workers"
        t0 = time.perf_counter()
        run_job(DatasetJob(read_config(scene), multi, workers=3))
        elapsed += time.perf_counter() - t0
        h1, h2, h3 = tree_digest(first), tree_digest(again), tree_digest(multi)
        d["files"] = sum(1 for p in first.rglob("*") if p.is_file())
        d["hash"] = h1[:12]
        assert h1 == h2 == h3
        assert elapsed < 300


def test_c8_format_interop(criterion, dataset, tmp_path):
    with criterion(8, "EXR/PNG interop") as d:
        scene, out, _, _ = dataset
        cfg = read_config(scene)
        exrs = sorted(out.rglob("*.exr"))
        assert len(exrs) == 6
        for p in exrs:
            ident, frame = p.parent.name, int(p.name[6:11])
            # the same frame rendered in-process gives the buffer that was serialized
            res = preview_frame(cfg, ident, frame, out_root=tmp_path, passes=("depth",))
            with OpenEXR.File(str(p)) as f:
                z = f.channels()["Z"].pixels
            assert z.dtype == np.float32
            assert z.tobytes() == np.asarray(res.depth, np.float32).tobytes()
        d["exr_checked"] = len(exrs)
        png = np.asarray(Image.open(io.BytesIO(write_png_rgb(np.array([[[0.0] * 3, [1.0] * 3, [0.5] * 3]])))))
        d["srgb"] = png[0, :, 0].tolist()
        assert png[0, :, 0].tolist() == [0, 255, 188]
        rgb = np.asarray(Image.open(next(out.rglob("frame_00000.png"))))
        assert rgb.shape == (48, 64, 3) and rgb.dtype == np.uint8


def test_c9_branched_variance(criterion):
    with criterion(9, "branched variance reduction") as d:
        s = prepare_scene(occluder_scene(opacity=0.5))
        cam = CameraModel(width_px=48, height_px=36, extrinsics=look_from((0, 0, -1.2), 1.0))
        common = dict(samples_per_pixel=16, max_bounces=4, seed=9)
        plain = render_frame(s, cam, RenderSettings(**common))
        branched = render_frame(s, cam, RenderSettings(**common, branched=True))
        vp, vb = float(plain.variance.mean()), float(branched.variance.mean())
        d["plain"] = f"{vp:.3e}"
        d["branched"] = f"{vb:.3e}"
        assert vb < vp


def test_c10_depth_id_coupling(criterion, dataset):
    with criterion(10, "depth/id coupling and visualization") as d:
        _, out, _, _ = dataset
        frames = sorted(out.rglob("frame_*.exr"))
        for p in frames:
            depth = read_exr_depth(p.read_bytes())
            ids = np.asarray(Image.open(p.with_name(p.name.replace(".exr", ".id.png")))).astype(int)
            assert np.array_equal(ids > 0, np.isfinite(depth))
        d["frames"] = len(frames)
        vis = depth_to_vis(np.array([1.0, 2.0, 3.0])).tolist()
        d["vis"] = vis
        assert vis == [0, 128, 255]
