"""Batch orchestration: config -> per-identity scenes -> posed frames ->
rendered buffers -> files in ``<root>/<identity>/frame_%05d.*``."""

from __future__ import annotations

import dataclasses
import logging
import multiprocessing
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import rng
from .assets import (
    AssetError,
    ConfigError,
    SceneConfig,
    load_rig_sidecar,
    load_scene_config,
    parse_mtl,
    parse_obj_full,
)
from .camera import CameraModel, intrinsics_from_camera, look_from, relative_head_pose
from .outputs import (
    FrameManifest,
    canonical_json,
    depth_to_vis,
    write_exr_depth,
    write_manifest,
    write_png_gray,
    write_png_id,
    write_png_rgb,
)
from .pose import (
    EULER_CONVENTION,
    EulerPose,
    PoseRanges,
    PoseSchedule,
    ScheduleError,
    apply_pose,
    bone_world_transforms,
    euler_to_matrix,
    grid_capacity,
    sample_pose_schedule,
)
from .render import RenderSettings, render_frame
from .scene import Light, Material, Scene, SceneObject, Transform, validate_scene

log = logging.getLogger(__name__)

FAST_PREVIEW_SPP = 4


class JobError(RuntimeError):
    """Invalid input detected before any frame was rendered."""

    def __init__(self, violations: Sequence[str]):
        super().__init__("\n".join(violations))
        self.violations = list(violations)


@dataclass
class IdentityAssets:
    name: str
    index: int
    scene: Scene  # rest pose, camera unset
    face: SceneObject  # the rigged identity mesh (objects[0] of scene)
    presets: dict


def _transform(tc) -> Transform:
    r = euler_to_matrix(EulerPose(tc.rotation_deg.yaw, tc.rotation_deg.pitch, tc.rotation_deg.roll))
    return Transform(rotation=r, translation=np.array(tc.translation, dtype=np.float64), scale=tc.scale)


def _load_mesh(cfg: SceneConfig, rel: str, prefix: str, object_id: int, background: bool):
    path = cfg.resolve(rel)
    if not path.is_file():
        raise AssetError(f"missing mesh file {path}")
    res = parse_obj_full(path.read_bytes(), name=prefix)
    materials = {}
    for lib in res.mtllibs:
        lib_path = path.parent / lib
        if not lib_path.is_file():
            raise AssetError(f"missing material library {lib_path}")
        for m in parse_mtl(lib_path.read_bytes(), base_dir=lib_path.parent):
            materials[f"{prefix}/{m.name}"] = dataclasses.replace(m, name=f"{prefix}/{m.name}")
    names = tuple(f"{prefix}/{m}" for m in res.mesh.triangle_materials)
    for n in set(names):
        if n not in materials:
            # unresolved usemtl (or none at all): neutral grey
            materials[n] = Material(n)
    mesh = dataclasses.replace(
        res.mesh, triangle_materials=names, object_id=object_id, is_background=background
    )
    return mesh, materials


def light_from_config(lc) -> Light:
    kw = dict(kind=lc.kind, intensity=lc.intensity, color=tuple(lc.color), name=lc.name)
    if lc.position is not None:
        kw["position"] = tuple(lc.position)
    if lc.direction is not None:
        kw["direction"] = tuple(lc.direction)
    if lc.kind == "spot":
        kw.update(cone_angle_deg=lc.cone_angle_deg, falloff=lc.falloff)
    if lc.kind == "area":
        kw.update(position=tuple(lc.center), edge_u=tuple(lc.edge_u), edge_v=tuple(lc.edge_v))
    return Light(**kw)


def load_identity(cfg: SceneConfig, index: int) -> IdentityAssets:
    """Build the rest-pose scene for one identity. Object ids follow load
    order: the identity mesh is 1, background meshes 2, 3, ..."""
    ident = cfg.assets.identities[index]
    mesh, materials = _load_mesh(cfg, ident.mesh, ident.name, 1, False)
    rig, morphs, presets = None, (), {"neutral": {}}
    if ident.rig is not None:
        rig_path = cfg.resolve(ident.rig)
        if not rig_path.is_file():
            raise AssetError(f"missing rig sidecar {rig_path}")
        bundle = load_rig_sidecar(rig_path.read_bytes(), mesh)
        rig, morphs, presets = bundle.rig, bundle.morphs, bundle.expressions
    face = SceneObject(mesh, _transform(ident.transform), rig, morphs, presets)
    objects = [face]
    for j, bg in enumerate(cfg.assets.background):
        bmesh, bmats = _load_mesh(cfg, bg.mesh, f"background{j}", 2 + j, True)
        materials.update(bmats)
        objects.append(SceneObject(bmesh, _transform(bg.transform)))
    scene = Scene(
        objects=objects,
        materials=materials,
        lights=[light_from_config(lc) for lc in cfg.lights],
        background=cfg.render.background,
    )
    return IdentityAssets(ident.name, index, scene, face, presets)


def pose_ranges(cfg: SceneConfig) -> PoseRanges:
    p = cfg.poses
    return PoseRanges(
        yaw=tuple(p.yaw_deg),
        pitch=tuple(p.pitch_deg),
        roll=tuple(p.roll_deg),
        distance=tuple(p.distance_m),
        grid_steps=(p.grid_steps.yaw, p.grid_steps.pitch, p.grid_steps.roll),
    )


def identity_schedule(cfg: SceneConfig, assets: IdentityAssets) -> PoseSchedule:
    p = cfg.poses
    return sample_pose_schedule(
        pose_ranges(cfg),
        p.count,
        mode=p.mode,
        seed=rng.hash_keys(cfg.seed, assets.index),
        bones=p.bones,
        expressions=p.expressions,
        expression_mode=p.expression_mode,
        presets=assets.presets,
    )


def frame_seed(global_seed: int, identity_index: int, frame_index: int) -> int:
    return rng.hash_keys(global_seed, identity_index, frame_index)


def camera_target(cfg: SceneConfig, assets: IdentityAssets) -> np.ndarray:
    if cfg.camera.target is not None:
        return np.asarray(cfg.camera.target, dtype=np.float64)
    rig = assets.face.rig
    if rig is None:
        raise AssetError("camera.target is required when the identity has no rig")
    pivot = rig.bones[rig.bone_index(cfg.camera.target_bone)].pivot
    return assets.face.transform.apply(np.asarray(pivot, dtype=np.float64))


def frame_camera(cfg: SceneConfig, assets: IdentityAssets, distance: float) -> CameraModel:
    c = cfg.camera
    r = euler_to_matrix(EulerPose(c.orientation_deg.yaw, c.orientation_deg.pitch, c.orientation_deg.roll))
    return CameraModel(
        fov_deg=c.fov_deg,
        sensor_mm=c.sensor_mm,
        width_px=c.resolution[0],
        height_px=c.resolution[1],
        near_m=c.near_m,
        far_m=c.far_m,
        extrinsics=look_from(camera_target(cfg, assets), distance, r),
    )


def head_world_rotation(assets: IdentityAssets, rotations, bone: str = "head") -> np.ndarray:
    face = assets.face
    r = face.transform.rotation
    if face.rig is None:
        return r
    try:
        bi = face.rig.bone_index(bone)
    except KeyError:
        return r
    return r @ bone_world_transforms(face.rig, rotations)[bi][0]


@dataclass
class FrameResult:
    identity: str
    identity_index: int
    frame_index: int
    record: Optional[dict] = None
    error: Optional[str] = None
    depth: Optional[np.ndarray] = None


def render_identity_frame(
    cfg: SceneConfig,
    assets: IdentityAssets,
    frame_index: int,
    out_root: Path,
    passes: Sequence[str],
    spp: Optional[int] = None,
    max_bounces: Optional[int] = None,
    threads: int = 1,
    schedule: Optional[PoseSchedule] = None,
) -> FrameResult:
    schedule = schedule or identity_schedule(cfg, assets)
    frame = schedule[frame_index]
    face = assets.face
    verts, norms = apply_pose(face.mesh, face.rig, face.morphs, frame)
    posed_face = dataclasses.replace(face, mesh=dataclasses.replace(face.mesh, vertices=verts, normals=norms))
    cam = frame_camera(cfg, assets, frame.camera_distance_m)
    scene = dataclasses.replace(assets.scene, objects=(posed_face,) + assets.scene.objects[1:], camera=cam)
    fseed = frame_seed(cfg.seed, assets.index, frame_index)
    settings = RenderSettings(
        samples_per_pixel=spp or cfg.render.samples_per_pixel,
        max_bounces=max_bounces or cfg.render.max_bounces,
        branched=cfg.render.branched,
        branch_light_samples=cfg.render.branch_light_samples,
        seed=fseed,
        passes=tuple(passes),
        threads=threads,
    )
    buffers = render_frame(scene, cam, settings)
    if buffers.rejected_samples:
        log.warning("%s frame %d: %d non-finite samples rejected", assets.name, frame_index, buffers.rejected_samples)

    ident_dir = out_root / assets.name
    ident_dir.mkdir(parents=True, exist_ok=True)
    stem = f"frame_{frame_index:05d}"
    formats = set(cfg.output.formats)
    files = {}

    def emit(key, suffix, payload: bytes):
        rel = f"{assets.name}/{stem}{suffix}"
        (out_root / rel).write_bytes(payload)
        files[key] = rel

    if "rgb" in passes and "png" in formats:
        emit("rgb", ".png", write_png_rgb(buffers.rgb))
    if "depth" in passes:
        if "exr" in formats:
            emit("depth", ".exr", write_exr_depth(buffers.depth))
        if "vis" in formats:
            emit("vis", ".vis.png", write_png_gray(depth_to_vis(buffers.depth)))
    if "id" in passes and "id" in formats:
        emit("id", ".id.png", write_png_id(buffers.id))

    intr = intrinsics_from_camera(cam)
    head_rel = relative_head_pose(head_world_rotation(assets, frame.bone_rotations), cam)
    manifest = FrameManifest(
        frame_index=frame_index,
        identity_id=assets.name,
        expression_name=frame.expression_name,
        morph_weights=dict(frame.morph_weights),
        bone_rotations={b: p.as_dict() for b, p in frame.bone_rotations.items()},
        head_pose_camera=head_rel.as_dict(),
        K=tuple(intr.K.ravel()),
        camera_to_world=tuple(cam.camera_to_world().ravel()),
        near_m=cam.near_m,
        far_m=cam.far_m,
        camera_distance_m=frame.camera_distance_m,
        lights=tuple(lt.to_dict() for lt in scene.lights),
        seed=fseed,
        files={**files, "manifest": f"{assets.name}/{stem}.json"},
        euler_convention=EULER_CONVENTION,
        extra={
            "global_seed": cfg.seed,
            "resolution": [cam.width_px, cam.height_px],
            "fov_deg": cam.fov_deg,
            "sensor_mm": cam.sensor_mm,
            "focal_mm": intr.focal_mm,
            "render": {
                "samples_per_pixel": settings.samples_per_pixel,
                "max_bounces": settings.max_bounces,
                "branched": settings.branched,
                "branch_light_samples": settings.branch_light_samples,
                "passes": list(settings.passes),
            },
        },
    )
    (ident_dir / f"{stem}.json").write_text(write_manifest(manifest))
    record = {
        "identity": assets.name,
        "frame_index": frame_index,
        "expression": frame.expression_name,
        "head_pose_camera": head_rel.as_dict(),
        "camera_distance_m": frame.camera_distance_m,
        "files": manifest.files,
    }
    return FrameResult(assets.name, assets.index, frame_index, record, depth=buffers.depth)


# ----------------------------------------------------------------------------
# validation


def validate_loaded(cfg: SceneConfig) -> list[str]:
    """Asset existence, scene invariants and pose-schedule feasibility."""
    out: list[str] = []
    p = cfg.poses
    n_poses = p.count if p.expression_mode == "cycle" else -(-p.count // len(p.expressions))
    if p.mode == "grid":
        cap = grid_capacity(pose_ranges(cfg), len(p.bones))
        if n_poses > cap:
            out.append(f"poses.count: grid mode needs {n_poses} poses but the grid steps allow only {cap}")
    for i, ident in enumerate(cfg.assets.identities):
        try:
            assets = load_identity(cfg, i)
        except (AssetError, OSError) as exc:
            out.append(f"assets.identities.{i} ({ident.name}): {exc}")
            continue
        out.extend(f"{ident.name}: {v}" for v in validate_scene(assets.scene))
        rig = assets.face.rig
        bone_names = {b.name for b in rig.bones} if rig is not None else set()
        for b in p.bones:
            if b not in bone_names:
                out.append(f"{ident.name}: poses.bones references missing bone {b!r}")
        for e in p.expressions:
            if e not in assets.presets:
                out.append(f"{ident.name}: poses.expressions references undefined expression {e!r}")
        if cfg.camera.target is None and cfg.camera.target_bone not in bone_names:
            out.append(f"{ident.name}: camera.target_bone {cfg.camera.target_bone!r} not found and no camera.target given")
    return out


def read_config(path: Union[str, Path]) -> SceneConfig:
    path = Path(path)
    return load_scene_config(path.read_bytes(), base_dir=path.parent)


def validate_config(path: Union[str, Path]) -> list[str]:
    """Dry run: every violation found, or an empty list."""
    try:
        cfg = read_config(path)
    except ConfigError as exc:
        return list(exc.violations)
    except OSError as exc:
        return [f"cannot read {path}: {exc}"]
    return validate_loaded(cfg)


# ----------------------------------------------------------------------------
# jobs


@dataclass
class DatasetJob:
    config: SceneConfig
    output_root: Path
    seed: Optional[int] = None
    workers: int = 1
    frames: Optional[tuple[int, int]] = None  # half-open [start, stop)
    passes: Optional[tuple[str, ...]] = None
    identities: Optional[Sequence[str]] = None


@dataclass
class DatasetSummary:
    frames_rendered: int
    failures: list
    wall_time_s: float

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0

    def to_dict(self) -> dict:
        return {
            "frames_rendered": self.frames_rendered,
            "failures": self.failures,
            "wall_time_s": self.wall_time_s,
        }


_WORKER_CACHE: dict = {}


def _task(cfg: SceneConfig, ident_index: int, frame_index: int, out_root: str, passes, threads: int) -> FrameResult:
    key = (cfg.model_dump_json(), cfg.base_dir, ident_index)
    name = cfg.assets.identities[ident_index].name
    try:
        if key not in _WORKER_CACHE:
            _WORKER_CACHE.clear()  # one identity scene resident at a time
            assets = load_identity(cfg, ident_index)
            _WORKER_CACHE[key] = (assets, identity_schedule(cfg, assets))
        assets, schedule = _WORKER_CACHE[key]
        res = render_identity_frame(cfg, assets, frame_index, Path(out_root), passes, threads=threads, schedule=schedule)
        res.depth = None
        return res
    except Exception as exc:  # fail-soft: one bad frame must not stop the batch
        log.error("%s frame %d failed: %s", name, frame_index, exc)
        log.debug("%s", traceback.format_exc())
        return FrameResult(name, ident_index, frame_index, error=f"{type(exc).__name__}: {exc}")


def _worker_task(args):
    return _task(*args)


def parse_frame_range(text: str) -> tuple[int, int]:
    """``"A..B"`` -> (A, B), the half-open frame range [A, B)."""
    a, sep, b = text.partition("..")
    if not sep:
        raise ValueError(f"frame range must look like A..B, got {text!r}")
    start, stop = int(a), int(b)
    if start < 0 or stop <= start:
        raise ValueError(f"empty or negative frame range {text!r}")
    return start, stop


def _check_writable(root: Path):
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise JobError([f"output root {root} is not writable: {exc}"]) from None


def run_job(job: DatasetJob) -> DatasetSummary:
    t0 = time.perf_counter()
    cfg = job.config
    if job.seed is not None:
        cfg = cfg.model_copy(update={"seed": int(job.seed)})
    passes = tuple(job.passes or cfg.render.passes)
    bad = set(passes) - {"rgb", "depth", "id"}
    if bad:
        raise JobError([f"unknown pass(es) {sorted(bad)}"])
    violations = validate_loaded(cfg)
    count = cfg.poses.count
    start, stop = job.frames or (0, count)
    if stop > count:
        violations.append(f"frames {start}..{stop} exceed the schedule (valid range 0..{count})")
    if violations:
        raise JobError(violations)
    root = Path(job.output_root)
    _check_writable(root)

    idents = list(range(len(cfg.assets.identities)))
    if job.identities is not None:
        names = [i.name for i in cfg.assets.identities]
        missing = [n for n in job.identities if n not in names]
        if missing:
            raise JobError([f"unknown identity {n!r}" for n in missing])
        idents = [names.index(n) for n in job.identities]
    tasks = [(i, k) for i in idents for k in range(start, stop)]
    workers = max(1, int(job.workers))
    threads = max(1, workers // max(1, len(tasks))) if workers > len(tasks) else 1

    args = [(cfg, i, k, str(root), passes, threads) for i, k in tasks]
    if workers == 1 or len(tasks) == 1:
        results = [_task(*a) for a in args]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(min(workers, len(tasks)), mp_context=ctx) as pool:
            results = list(pool.map(_worker_task, args))
    _WORKER_CACHE.clear()

    results.sort(key=lambda r: (r.identity_index, r.frame_index))
    ok = [r for r in results if r.error is None]
    failures = [{"identity": r.identity, "frame_index": r.frame_index, "error": r.error} for r in results if r.error]
    with open(root / "index.jsonl", "w") as fh:
        for r in ok:
            fh.write(canonical_json(r.record, indent=None))
    summary = DatasetSummary(len(ok), failures, time.perf_counter() - t0)
    (root / "summary.json").write_text(canonical_json(summary.to_dict()))
    return summary


def resolve_identity(cfg: SceneConfig, identity: Union[str, int]) -> int:
    names = [i.name for i in cfg.assets.identities]
    if isinstance(identity, str) and identity in names:
        return names.index(identity)
    try:
        k = int(identity)
    except (TypeError, ValueError):
        raise JobError([f"unknown identity {identity!r}; known: {', '.join(names)}"]) from None
    if not 0 <= k < len(names):
        raise JobError([f"identity index {k} out of range (0..{len(names) - 1})"])
    return k


def preview_frame(
    cfg: SceneConfig,
    identity: Union[str, int],
    frame_index: int,
    fast: bool = False,
    out_root: Optional[Path] = None,
    passes: Optional[Sequence[str]] = None,
) -> FrameResult:
    """Render one frame with the same seeds as the batch job. ``fast`` only
    lowers samples and bounces; resolution and depth/id stay identical."""
    k = resolve_identity(cfg, identity)
    count = cfg.poses.count
    if not 0 <= frame_index < count:
        raise JobError([f"frame {frame_index} out of range; valid frames are 0..{count - 1}"])
    violations = validate_loaded(cfg)
    if violations:
        raise JobError(violations)
    root = Path(out_root) if out_root is not None else cfg.resolve(cfg.output.directory) / "preview"
    _check_writable(root)
    assets = load_identity(cfg, k)
    return render_identity_frame(
        cfg,
        assets,
        frame_index,
        root,
        tuple(passes or cfg.render.passes),
        spp=min(FAST_PREVIEW_SPP, cfg.render.samples_per_pixel) if fast else None,
        max_bounces=min(2, cfg.render.max_bounces) if fast else None,
        threads=os.cpu_count() or 1,
    )
