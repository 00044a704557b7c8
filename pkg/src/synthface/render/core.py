from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..camera import CameraModel, Ray, intrinsics_from_camera
from ..scene import Light, Material, Scene, Texture
from . import kernels as K

ALL_PASSES = ("rgb", "depth", "id")
_KIND_CODE = {"point": K.KIND_POINT, "sun": K.KIND_SUN, "spot": K.KIND_SPOT, "area": K.KIND_AREA}


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class RenderSettings:
    samples_per_pixel: int = 256
    max_bounces: int = 6
    branched: bool = False
    branch_light_samples: int = 4
    seed: int = 0
    passes: tuple[str, ...] = ALL_PASSES
    # Tile-parallel threads inside one frame; never changes the output.
    threads: int = 1
    tile_size: int = 32

    def __post_init__(self):
        if self.samples_per_pixel < 1:
            raise RenderError("samples_per_pixel must be >= 1")
        if self.max_bounces < 1:
            raise RenderError("max_bounces must be >= 1")
        if self.branch_light_samples < 1:
            raise RenderError("branch_light_samples must be >= 1")
        bad = set(self.passes) - set(ALL_PASSES)
        if bad:
            raise RenderError(f"unknown pass(es) {sorted(bad)}")
        object.__setattr__(self, "passes", tuple(self.passes))
        object.__setattr__(self, "seed", int(self.seed) & ((1 << 64) - 1))


@dataclass
class FrameBuffers:
    rgb: np.ndarray  # (h, w, 3) float32 linear
    depth: np.ndarray  # (h, w) float32 planar meters, +inf = no hit
    id: np.ndarray  # (h, w) uint32, 0 = no hit
    variance: Optional[np.ndarray] = None  # (h, w) per-pixel sample variance
    rejected_samples: int = 0


@dataclass(frozen=True)
class Hit:
    t: float
    position: np.ndarray
    normal: np.ndarray
    geometric_normal: np.ndarray
    material: str
    object_id: int
    mesh_index: int
    triangle: int
    barycentric: tuple[float, float, float]
    uv: tuple[float, float]


@dataclass
class PreparedScene:
    """Scene flattened to world-space arrays plus a BVH."""

    arrays: tuple
    material_names: list
    tri_mesh: np.ndarray
    tri_local: np.ndarray
    source: Scene = field(repr=False)


def _pack_lights(lights: Sequence[Light]) -> np.ndarray:
    out = np.zeros((len(lights), K.LIGHT_COLS))
    for i, lt in enumerate(lights):
        row = out[i]
        row[K.L_KIND] = _KIND_CODE[lt.kind]
        row[K.L_POS : K.L_POS + 3] = lt.position
        row[K.L_INT] = lt.intensity
        row[K.L_COL : K.L_COL + 3] = lt.color
        if lt.kind in ("sun", "spot"):
            row[K.L_DIR : K.L_DIR + 3] = lt.direction
        if lt.kind == "spot":
            outer = math.radians(lt.cone_angle_deg)
            inner = outer * (1.0 - lt.falloff)
            row[K.L_COS_OUTER] = math.cos(outer)
            row[K.L_COS_INNER] = math.cos(inner)
        if lt.kind == "area":
            eu = np.asarray(lt.edge_u, dtype=np.float64)
            ev = np.asarray(lt.edge_v, dtype=np.float64)
            n = np.cross(eu, ev)
            area = float(np.linalg.norm(n))
            row[K.L_DIR : K.L_DIR + 3] = n / area
            row[K.L_EU : K.L_EU + 3] = eu
            row[K.L_EV : K.L_EV + 3] = ev
            row[K.L_AREA] = area
    return out


def _pack_materials(materials: dict):
    names = list(materials)
    mat_f = np.zeros((max(1, len(names)), 7))
    mat_tex = np.full((max(1, len(names)), 4), -1, np.int64)
    textures: list[Texture] = []
    tex_ids: dict[int, int] = {}

    def tex_index(t: Optional[Texture]) -> int:
        if t is None:
            return -1
        if id(t) not in tex_ids:
            tex_ids[id(t)] = len(textures)
            textures.append(t)
        return tex_ids[id(t)]

    for i, name in enumerate(names):
        m: Material = materials[name]
        mat_f[i] = (*m.base_color, m.opacity, m.metallic, max(m.roughness, K.MIN_ROUGHNESS), m.specular)
        mat_tex[i] = [tex_index(t) for t in (m.base_color_map, m.opacity_map, m.metallic_map, m.roughness_map)]
    tex_info = np.zeros((max(1, len(textures)), 3), np.int64)
    chunks, off = [], 0
    for i, t in enumerate(textures):
        tex_info[i] = (off, t.width, t.height)
        chunks.append(np.asarray(t.data, dtype=np.float32).reshape(-1, 4))
        off += t.width * t.height
    tex_data = np.concatenate(chunks) if chunks else np.zeros((1, 4), np.float32)
    return names, mat_f, mat_tex, tex_info, tex_data


def prepare_scene(scene: Scene) -> PreparedScene:
    names, mat_f, mat_tex, tex_info, tex_data = _pack_materials(scene.materials)
    mat_index = {n: i for i, n in enumerate(names)}
    verts, norms, uvs, tris, tri_mat, tri_obj, tri_mesh, tri_local = [], [], [], [], [], [], [], []
    base = 0
    for mi, obj in enumerate(scene.objects):
        mesh = obj.mesh
        nv = len(mesh.vertices)
        nt = len(mesh.triangles)
        verts.append(obj.transform.apply(mesh.vertices))
        n = mesh.normals @ obj.transform.rotation.T
        norms.append(n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300))
        uvs.append(mesh.uvs if mesh.uvs is not None else np.zeros((nv, 2)))
        tris.append(mesh.triangles + base)
        if mesh.triangle_materials is not None:
            tri_mat.append(np.array([mat_index[m] for m in mesh.triangle_materials], np.int64))
        else:
            tri_mat.append(np.full(nt, mat_index[mesh.material_id], np.int64))
        tri_obj.append(np.full(nt, mesh.object_id, np.int64))
        tri_mesh.append(np.full(nt, mi, np.int64))
        tri_local.append(np.arange(nt, dtype=np.int64))
        base += nv

    def cat(parts, shape, dtype):
        return np.ascontiguousarray(np.concatenate(parts).astype(dtype)) if parts else np.zeros(shape, dtype)

    V = cat(verts, (0, 3), np.float64)
    N = cat(norms, (0, 3), np.float64)
    UV = cat(uvs, (0, 2), np.float64)
    T = cat(tris, (0, 3), np.int64).reshape(-1, 3)
    bvh = K.build_bvh(V if len(V) else np.zeros((1, 3)), T)
    arrays = (
        V if len(V) else np.zeros((1, 3)),
        N if len(N) else np.zeros((1, 3)),
        UV if len(UV) else np.zeros((1, 2)),
        T,
        cat(tri_mat, (0,), np.int64),
        cat(tri_obj, (0,), np.int64),
        *bvh,
        mat_f,
        mat_tex,
        tex_info,
        tex_data,
        _pack_lights(scene.lights),
        np.asarray(scene.background, dtype=np.float64),
    )
    return PreparedScene(arrays, names, cat(tri_mesh, (0,), np.int64), cat(tri_local, (0,), np.int64), scene)


def _prepared(scene) -> PreparedScene:
    return scene if isinstance(scene, PreparedScene) else prepare_scene(scene)


def _vec(a) -> tuple:
    a = np.asarray(a, dtype=np.float64)
    return (float(a[0]), float(a[1]), float(a[2]))


def intersect(ray: Ray, scene, tmin: float = 0.0, tmax: float = math.inf) -> Optional[Hit]:
    """Nearest surface hit along ``ray``, or None."""
    ps = _prepared(scene)
    d = _vec(ray.direction)
    tri, t, b1, b2 = K.closest_hit(ps.arrays, _vec(ray.origin), d, tmin, tmax)
    if tri < 0:
        return None
    wo = (-d[0], -d[1], -d[2])
    p, ng, ns, u, v = K.surface(ps.arrays, tri, b1, b2, wo)
    return Hit(
        t=float(t),
        position=np.array(p),
        normal=np.array(ns),
        geometric_normal=np.array(ng),
        material=ps.material_names[int(ps.arrays[4][tri])],
        object_id=int(ps.arrays[5][tri]),
        mesh_index=int(ps.tri_mesh[tri]),
        triangle=int(ps.tri_local[tri]),
        barycentric=(1.0 - b1 - b2, float(b1), float(b2)),
        uv=(float(u), float(v)),
    )


@dataclass(frozen=True)
class LightSample:
    direction: np.ndarray
    distance: float
    radiance: np.ndarray
    pdf: float
    is_delta: bool
    # radiance * cos(theta) / pdf for the given normal (one-sample estimate
    # for area lights, exact for delta lights)
    irradiance: Optional[np.ndarray] = None


def sample_light(light: Light, point, normal=None, u=(0.5, 0.5)) -> LightSample:
    rows = _pack_lights([light])
    wi, dist, rad, pdf, delta = K.sample_light(rows, 0, _vec(point), float(u[0]), float(u[1]))
    wi_a, rad_a = np.array(wi), np.array(rad)
    irr = None
    if normal is not None:
        cos = max(0.0, float(np.dot(wi_a, np.asarray(normal, dtype=np.float64))))
        irr = rad_a * cos / pdf if pdf > 0 else np.zeros(3)
    return LightSample(wi_a, float(dist), rad_a, float(pdf), bool(delta), irr)


@dataclass(frozen=True)
class BsdfValue:
    diffuse: np.ndarray
    specular: np.ndarray
    pdf_diffuse: float
    pdf_specular: float
    specular_probability: float
    transmission_probability: float

    @property
    def value(self) -> np.ndarray:
        return self.diffuse + self.specular

    @property
    def pdf(self) -> float:
        """Density of the reflected direction under one-sample lobe selection."""
        p = self.specular_probability
        return (1.0 - self.transmission_probability) * ((1.0 - p) * self.pdf_diffuse + p * self.pdf_specular)


def eval_bsdf(material: Material, wi, wo, normal, uv=(0.0, 0.0)) -> BsdfValue:
    _, mat_f, mat_tex, tex_info, tex_data = _pack_materials({"m": material})
    arrays = (None,) * 13 + (mat_f, mat_tex, tex_info, tex_data)
    base, alpha, metal, rough, spec = K.material_at(arrays, 0, float(uv[0]), float(uv[1]))
    n, wo_t = _vec(normal), _vec(wo)
    fd, fs, pdf_d, pdf_s = K.bsdf_eval(base, metal, rough, spec, n, _vec(wi), wo_t)
    p_s = K.lobe_weights(base, metal, spec, K.dot(n, wo_t))
    return BsdfValue(np.array(fd), np.array(fs), float(pdf_d), float(pdf_s), float(p_s), 1.0 - float(alpha))


def _path_state(seed: int, pixel: int, sample: int) -> np.ndarray:
    from ..rng import hash_keys

    return np.array([hash_keys(seed, pixel, sample), 0], dtype=np.uint64)


def trace_path(ray: Ray, scene, settings: RenderSettings, pixel: int = 0, sample: int = 0) -> np.ndarray:
    """Radiance along one ray, keyed by (settings.seed, pixel, sample)."""
    ps = _prepared(scene)
    state = _path_state(settings.seed, pixel, sample)
    o, d = _vec(ray.origin), _vec(ray.direction)
    if settings.branched:
        c = K.trace_branched(ps.arrays, o, d, 0.0, math.inf, settings.max_bounces, settings.branch_light_samples, state)
    else:
        c = K.trace_single(ps.arrays, o, d, 0.0, math.inf, 0, (1.0, 1.0, 1.0), 0.0, 0.0, settings.max_bounces, state)
    return np.array(c)


def render_frame(scene, cam: CameraModel, settings: RenderSettings) -> FrameBuffers:
    w, h = cam.width_px, cam.height_px
    if w <= 0 or h <= 0:
        raise RenderError("zero-area image")
    ps = _prepared(scene)
    intr = intrinsics_from_camera(cam)
    rgb = np.zeros((h, w, 3), np.float64)
    var = np.zeros((h, w), np.float64)
    depth = np.zeros((h, w), np.float64)
    ids = np.zeros((h, w), np.int64)
    rejected = np.zeros(1, np.int64)
    spp = settings.samples_per_pixel if "rgb" in settings.passes else 0
    rot = np.ascontiguousarray(cam.rotation, dtype=np.float64)
    pos = _vec(cam.position)
    ts = settings.tile_size
    tiles = [(x, min(x + ts, w), y, min(y + ts, h)) for y in range(0, h, ts) for x in range(0, w, ts)]
    rej_parts = [np.zeros(1, np.int64) for _ in tiles]

    def run(k):
        x0, x1, y0, y1 = tiles[k]
        K.render_tile(
            ps.arrays, rot, pos, intr.fx, intr.fy, intr.cx, intr.cy, cam.near_m, cam.far_m,
            spp, settings.max_bounces, settings.branched, settings.branch_light_samples,
            np.uint64(settings.seed), x0, x1, y0, y1, w, rgb, var, depth, ids, rej_parts[k],
        )

    if settings.threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(settings.threads) as pool:
            list(pool.map(run, range(len(tiles))))
    else:
        for k in range(len(tiles)):
            run(k)
    rejected[0] = sum(int(r[0]) for r in rej_parts)
    return FrameBuffers(
        rgb=rgb.astype(np.float32),
        depth=depth.astype(np.float32),
        id=ids.astype(np.uint32),
        variance=var,
        rejected_samples=int(rejected[0]),
    )
