"""Immutable in-memory world: meshes, rigs, morphs, materials, lights, camera.

Coordinates are right-handed, +Y up, meters. Cameras look along their local -Z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MIN_ROUGHNESS = 0.01
LIGHT_KINDS = ("point", "sun", "spot", "area")


class SceneError(ValueError):
    pass


def _frozen(a, dtype, shape_tail) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Texture:
    """RGBA texels in linear [0, 1], row 0 at the top of the image."""

    name: str
    data: np.ndarray  # (h, w, 4) float32

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])


@dataclass(frozen=True)
class Material:
    name: str
    base_color: tuple[float, float, float] = (0.8, 0.8, 0.8)
    opacity: float = 1.0
    metallic: float = 0.0
    roughness: float = 0.5
    # Scales the dielectric F0 of 0.04; 0 gives a pure Lambertian surface.
    specular: float = 1.0
    base_color_map: Optional[Texture] = None
    opacity_map: Optional[Texture] = None
    metallic_map: Optional[Texture] = None
    roughness_map: Optional[Texture] = None

    def __post_init__(self):
        object.__setattr__(self, "base_color", tuple(float(c) for c in self.base_color))
        if self.roughness < MIN_ROUGHNESS:
            object.__setattr__(self, "roughness", MIN_ROUGHNESS)


@dataclass(frozen=True)
class Mesh:
    name: str
    vertices: np.ndarray
    triangles: np.ndarray
    normals: Optional[np.ndarray] = None
    uvs: Optional[np.ndarray] = None
    material_id: str = "default"
    object_id: int = 1
    # Per-triangle material names; overrides material_id when set (OBJ usemtl).
    triangle_materials: Optional[tuple[str, ...]] = None
    is_background: bool = False
    # OBJ position index of each vertex; vertices split at uv/normal seams
    # share a source index. Rig and morph sidecars index source vertices.
    source_index: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, np.float64, (3,)))
        if self.source_index is not None:
            object.__setattr__(self, "source_index", _frozen(self.source_index, np.int64, ()))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64, (3,)))
        if self.normals is None and len(self.triangles) and _indices_ok(self):
            object.__setattr__(self, "normals", area_weighted_normals(self.vertices, self.triangles))
        if self.normals is not None:
            object.__setattr__(self, "normals", _frozen(self.normals, np.float64, (3,)))
        if self.uvs is not None:
            object.__setattr__(self, "uvs", _frozen(self.uvs, np.float64, (2,)))

    @property
    def source_count(self) -> int:
        if self.source_index is None or not len(self.source_index):
            return len(self.vertices)
        return int(self.source_index.max()) + 1

    def source_map(self) -> np.ndarray:
        if self.source_index is None:
            return np.arange(len(self.vertices))
        return self.source_index

    @property
    def material_names(self) -> tuple[str, ...]:
        if self.triangle_materials is not None:
            return tuple(dict.fromkeys(self.triangle_materials))
        return (self.material_id,)


def _indices_ok(mesh: Mesh) -> bool:
    t = mesh.triangles
    return bool(t.size == 0 or (t.min() >= 0 and t.max() < len(mesh.vertices)))


def area_weighted_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    # Unnormalized cross product has length 2*area, which gives the area weighting.
    fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    n = np.zeros_like(v)
    for k in range(3):
        np.add.at(n, t[:, k], fn)
    length = np.linalg.norm(n, axis=1)
    out = np.zeros_like(n)
    ok = length > 0
    out[ok] = n[ok] / length[ok, None]
    out[~ok] = (0.0, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class Bone:
    name: str
    pivot: tuple[float, float, float]
    parent: Optional[int] = None


@dataclass(frozen=True)
class Rig:
    bones: tuple[Bone, ...]
    # (n_vertices, 4) bone indices (-1 = unused slot) and matching weights.
    bone_indices: np.ndarray
    bone_weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bones", tuple(self.bones))
        object.__setattr__(self, "bone_indices", _frozen(self.bone_indices, np.int64, (4,)))
        object.__setattr__(self, "bone_weights", _frozen(self.bone_weights, np.float64, (4,)))

    def bone_index(self, name: str) -> int:
        for i, b in enumerate(self.bones):
            if b.name == name:
                return i
        raise KeyError(f"unknown bone {name!r}")


@dataclass(frozen=True)
class MorphTarget:
    name: str
    indices: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", _frozen(self.indices, np.int64, ()))
        object.__setattr__(self, "deltas", _frozen(self.deltas, np.float64, (3,)))


@dataclass(frozen=True)
class Light:
    """A light source.

    ``intensity`` is radiant intensity in W/sr for point and spot lights,
    irradiance in W/m^2 for sun lights and radiance in W/(sr m^2) for area
    lights. ``cone_angle_deg`` is the half-angle of a spot cone and
    ``falloff`` the fraction of it, measured inward from the edge, over which
    the smooth falloff happens. Area lights are the rectangle
    ``center +- edge_u/2 +- edge_v/2`` emitting toward ``edge_u x edge_v``.
    """

    kind: str
    intensity: float
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: tuple[float, float, float] = (0.0, 0.0, -1.0)
    cone_angle_deg: float = 45.0
    falloff: float = 0.2
    edge_u: tuple[float, float, float] = (1.0, 0.0, 0.0)
    edge_v: tuple[float, float, float] = (0.0, 1.0, 0.0)
    name: str = ""

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "intensity": self.intensity, "color": list(self.color)}
        if self.kind in ("point", "spot"):
            d["position"] = list(self.position)
        if self.kind in ("sun", "spot"):
            d["direction"] = list(self.direction)
        if self.kind == "spot":
            d["cone_angle_deg"] = self.cone_angle_deg
            d["falloff"] = self.falloff
        if self.kind == "area":
            d["center"] = list(self.position)
            d["edge_u"] = list(self.edge_u)
            d["edge_v"] = list(self.edge_v)
        return d


@dataclass(frozen=True)
class Transform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, np.float64, (3,)).reshape(3, 3))
        object.__setattr__(self, "translation", _frozen(self.translation, np.float64, ()).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rotation.T) + self.translation


def transform_point(t: Transform, p) -> np.ndarray:
    return t.scale * (t.rotation @ np.asarray(p, dtype=np.float64)) + t.translation


@dataclass(frozen=True)
class SceneObject:
    """A mesh placed in the world, with its optional rig and morph targets."""

    mesh: Mesh
    transform: Transform = field(default_factory=Transform)
    rig: Optional[Rig] = None
    morphs: tuple[MorphTarget, ...] = ()
    expressions: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    materials: dict
    lights: tuple[Light, ...] = ()
    camera: Optional[object] = None  # camera.CameraModel
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "lights", tuple(self.lights))
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))


def _is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    return (
        r.shape == (3, 3)
        and np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0)
        and abs(np.linalg.det(r) - 1.0) <= tol
    )


def _unit(v, tol=1e-6) -> bool:
    return abs(float(np.linalg.norm(v)) - 1.0) <= tol


def _validate_mesh(mesh: Mesh, out: list[str]):
    tag = f"mesh {mesh.name!r}"
    nv = len(mesh.vertices)
    t = mesh.triangles
    if t.size and (t.min() < 0 or t.max() >= nv):
        out.append(f"{tag}: triangle index out of range (vertex count {nv})")
    if mesh.normals is not None:
        if len(mesh.normals) != nv:
            out.append(f"{tag}: {len(mesh.normals)} normals for {nv} vertices")
        else:
            bad = np.abs(np.linalg.norm(mesh.normals, axis=1) - 1.0) > 1e-6
            if bad.any():
                out.append(f"{tag}: {int(bad.sum())} normals not unit length")
    if mesh.uvs is not None and len(mesh.uvs) != nv:
        out.append(f"{tag}: {len(mesh.uvs)} uvs for {nv} vertices")
    if mesh.object_id < 1:
        out.append(f"{tag}: object_id must be >= 1, got {mesh.object_id}")
    if not np.all(np.isfinite(mesh.vertices)):
        out.append(f"{tag}: non-finite vertex coordinates")


def _has_cycle(bones) -> bool:
    n = len(bones)
    for i in range(n):
        seen, j = set(), i
        while j is not None and 0 <= j < n:
            if j in seen:
                return True
            seen.add(j)
            j = bones[j].parent
    return False


def _validate_rig(obj: SceneObject, out: list[str]):
    rig, mesh = obj.rig, obj.mesh
    tag = f"rig of mesh {mesh.name!r}"
    names = [b.name for b in rig.bones]
    if len(set(names)) != len(names):
        out.append(f"{tag}: duplicate bone names")
    for i, b in enumerate(rig.bones):
        if b.parent is not None and not 0 <= b.parent < len(rig.bones):
            out.append(f"{tag}: bone {b.name!r} has invalid parent {b.parent}")
    if _has_cycle(rig.bones):
        out.append(f"{tag}: bone parents form a cycle")
    nv = len(mesh.vertices)
    if rig.bone_weights.shape != (nv, 4) or rig.bone_indices.shape != (nv, 4):
        out.append(f"{tag}: skin weights must cover all {nv} vertices")
        return
    w = rig.bone_weights
    if (w < 0).any():
        out.append(f"{tag}: negative skin weights")
    if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
        out.append(f"{tag}: skin weights do not sum to 1")
    idx = rig.bone_indices
    used = w > 0
    if np.any(used & ((idx < 0) | (idx >= len(rig.bones)))):
        out.append(f"{tag}: skin weight references a missing bone")


def validate_scene(scene: Scene) -> list[str]:
    """Return every invariant violation found; an empty list means valid."""
    out: list[str] = []
    ids = {}
    for obj in scene.objects:
        mesh = obj.mesh
        _validate_mesh(mesh, out)
        for mname in mesh.material_names:
            if mname not in scene.materials:
                out.append(f"mesh {mesh.name!r}: unknown material {mname!r}")
        if mesh.object_id in ids:
            out.append(
                f"mesh {mesh.name!r}: object_id {mesh.object_id} already used by {ids[mesh.object_id]!r}"
            )
        ids.setdefault(mesh.object_id, mesh.name)
        t = obj.transform
        if not _is_rotation(t.rotation):
            out.append(f"mesh {mesh.name!r}: transform rotation is not a proper rotation")
        if not t.scale > 0:
            out.append(f"mesh {mesh.name!r}: transform scale must be positive")
        if obj.rig is not None:
            _validate_rig(obj, out)
        for m in obj.morphs:
            if m.indices.size and (m.indices.min() < 0 or m.indices.max() >= len(mesh.vertices)):
                out.append(f"mesh {mesh.name!r}: morph {m.name!r} index out of range")
            if len(m.indices) != len(m.deltas):
                out.append(f"mesh {mesh.name!r}: morph {m.name!r} has {len(m.indices)} indices but {len(m.deltas)} deltas")
    for name, mat in scene.materials.items():
        tag = f"material {name!r}"
        for ch in ("opacity", "metallic"):
            v = getattr(mat, ch)
            if not 0.0 <= v <= 1.0:
                out.append(f"{tag}: {ch} {v} outside [0, 1]")
        if not MIN_ROUGHNESS <= mat.roughness <= 1.0:
            out.append(f"{tag}: roughness {mat.roughness} outside [{MIN_ROUGHNESS}, 1]")
        if not all(0.0 <= c <= 1.0 for c in mat.base_color):
            out.append(f"{tag}: base_color {mat.base_color} outside [0, 1]")
        if mat.specular < 0:
            out.append(f"{tag}: specular must be >= 0")
    for i, light in enumerate(scene.lights):
        tag = f"light {light.name or i!r}"
        if light.kind not in LIGHT_KINDS:
            out.append(f"{tag}: unknown kind {light.kind!r}")
            continue
        if not light.intensity >= 0:
            out.append(f"{tag}: intensity must be >= 0")
        if light.kind in ("sun", "spot") and not _unit(light.direction):
            out.append(f"{tag}: direction is not unit length")
        if light.kind == "spot" and not 0.0 < light.cone_angle_deg <= 90.0:
            out.append(f"{tag}: cone angle {light.cone_angle_deg} outside (0, 90]")
        if light.kind == "spot" and not 0.0 <= light.falloff <= 1.0:
            out.append(f"{tag}: falloff {light.falloff} outside [0, 1]")
        if light.kind == "area":
            eu, ev = np.asarray(light.edge_u, float), np.asarray(light.edge_v, float)
            if np.linalg.norm(np.cross(eu, ev)) <= 0:
                out.append(f"{tag}: area rectangle has zero area")
            elif abs(eu @ ev) > 1e-9 * np.linalg.norm(eu) * np.linalg.norm(ev):
                out.append(f"{tag}: area light edges must be perpendicular")
    if any(c < 0 for c in scene.background):
        out.append("background radiance must be non-negative")
    return out


def world_vertices(obj: SceneObject, vertices: Optional[np.ndarray] = None) -> np.ndarray:
    return obj.transform.apply(obj.mesh.vertices if vertices is None else vertices)


def scene_bounds(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned (min, max) corners of every transformed vertex."""
    pts = [world_vertices(o) for o in scene.objects if len(o.mesh.vertices)]
    if not pts:
        raise SceneError("no geometry")
    allp = np.concatenate(pts)
    return allp.min(axis=0), allp.max(axis=0)
