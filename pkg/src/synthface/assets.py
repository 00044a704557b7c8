"""Input formats: Wavefront OBJ/MTL, PNG textures, the rig/morph sidecar and
the scene configuration document."""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .pose import DEFAULT_EXPRESSIONS
from .scene import MIN_ROUGHNESS, Bone, Material, Mesh, MorphTarget, Rig, Texture

log = logging.getLogger(__name__)

MAX_INFLUENCES = 4


class AssetError(ValueError):
    pass


class ObjParseError(AssetError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class ConfigError(AssetError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid scene config:\n  " + "\n  ".join(violations))
        self.violations = violations


def _text(data: Union[str, bytes]) -> str:
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data


# ----------------------------------------------------------------------------
# OBJ


@dataclass
class ObjResult:
    mesh: Mesh
    mtllibs: list[str] = field(default_factory=list)
    ignored_records: int = 0


def _resolve(tok: str, count: int, lineno: int, what: str) -> int:
    try:
        i = int(tok)
    except ValueError:
        raise ObjParseError(lineno, f"malformed {what} index {tok!r}") from None
    if i == 0:
        raise ObjParseError(lineno, f"{what} index 0 is invalid (indices are 1-based)")
    k = i - 1 if i > 0 else count + i
    if not 0 <= k < count:
        raise ObjParseError(lineno, f"{what} index {i} out of range ({count} defined)")
    return k


def parse_obj_full(data: Union[str, bytes], name: str = "mesh") -> ObjResult:
    positions, texcoords, normals = [], [], []
    corners_per_face: list[list[tuple[int, int, int]]] = []
    face_mats: list[str] = []
    mtllibs: list[str] = []
    current_mat = "default"
    ignored = 0
    for lineno, raw in enumerate(_text(data).splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, args = parts[0], parts[1:]
        try:
            if key == "v":
                positions.append([float(a) for a in args[:3]])
            elif key == "vt":
                texcoords.append([float(a) for a in args[:2]] + [0.0] * (2 - len(args[:2])))
            elif key == "vn":
                normals.append([float(a) for a in args[:3]])
            elif key == "f":
                if len(args) < 3:
                    raise ObjParseError(lineno, "face needs at least 3 vertices")
                face = []
                for tok in args:
                    fields = tok.split("/")
                    vi = _resolve(fields[0], len(positions), lineno, "vertex")
                    ti = _resolve(fields[1], len(texcoords), lineno, "texcoord") if len(fields) > 1 and fields[1] else -1
                    ni = _resolve(fields[2], len(normals), lineno, "normal") if len(fields) > 2 and fields[2] else -1
                    face.append((vi, ti, ni))
                corners_per_face.append(face)
                face_mats.append(current_mat)
            elif key == "usemtl":
                current_mat = " ".join(args) if args else "default"
            elif key == "mtllib":
                mtllibs.extend(args)
            elif key in ("o", "g", "s"):
                pass
            else:
                ignored += 1
        except ValueError as exc:
            if isinstance(exc, ObjParseError):
                raise
            raise ObjParseError(lineno, f"malformed {key!r} record") from None
        if key in ("v", "vn") and len(args) < 3:
            raise ObjParseError(lineno, f"{key!r} needs 3 coordinates")

    # One vertex per OBJ position; corners that disagree on uv/normal for the
    # same position get an appended copy.
    n_pos = len(positions)
    attr = [None] * n_pos
    extra: dict[tuple[int, int, int], int] = {}
    src = list(range(n_pos))
    tris, tri_mats = [], []
    for face, mat in zip(corners_per_face, face_mats):
        idx = []
        for c in face:
            vi = c[0]
            if attr[vi] is None:
                attr[vi] = c
                idx.append(vi)
            elif attr[vi] == c:
                idx.append(vi)
            else:
                if c not in extra:
                    extra[c] = len(src)
                    src.append(vi)
                idx.append(extra[c])
        for k in range(1, len(idx) - 1):
            tris.append((idx[0], idx[k], idx[k + 1]))
            tri_mats.append(mat)
    corner_of = [attr[i] if attr[i] is not None else (i, -1, -1) for i in range(n_pos)]
    corner_of += [c for c, _ in sorted(extra.items(), key=lambda kv: kv[1])]

    verts = np.array([positions[s] for s in src], dtype=np.float64).reshape(-1, 3)
    uvs = None
    if texcoords:
        uvs = np.array([texcoords[c[1]] if c[1] >= 0 else (0.0, 0.0) for c in corner_of]).reshape(-1, 2)
    norms = None
    if normals and all(c[2] >= 0 for c, s in zip(corner_of, src) if attr[s] is not None):
        norms = np.array([normals[c[2]] if c[2] >= 0 else (0.0, 0.0, 1.0) for c in corner_of]).reshape(-1, 3)
        length = np.linalg.norm(norms, axis=1, keepdims=True)
        norms = np.where(length > 0, norms / np.where(length > 0, length, 1.0), (0.0, 0.0, 1.0))
    if ignored:
        log.warning("%s: ignored %d unsupported OBJ records", name, ignored)
    mesh = Mesh(
        name=name,
        vertices=verts,
        triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
        normals=norms,
        uvs=uvs,
        triangle_materials=tuple(tri_mats),
        source_index=np.array(src, dtype=np.int64) if len(src) > n_pos else None,
    )
    return ObjResult(mesh, mtllibs, ignored)


def parse_obj(data: Union[str, bytes], name: str = "mesh") -> Mesh:
    return parse_obj_full(data, name).mesh


def serialize_obj(mesh: Mesh) -> str:
    """Write positions, normals, uvs and triangles with matching indices."""
    out = []
    for v in mesh.vertices:
        out.append("v %r %r %r" % tuple(float(x) for x in v))
    if mesh.uvs is not None:
        for t in mesh.uvs:
            out.append("vt %r %r" % tuple(float(x) for x in t))
    if mesh.normals is not None:
        for n in mesh.normals:
            out.append("vn %r %r %r" % tuple(float(x) for x in n))
    has_t, has_n = mesh.uvs is not None, mesh.normals is not None
    mats = mesh.triangle_materials or (mesh.material_id,) * len(mesh.triangles)
    current = None
    for tri, mat in zip(mesh.triangles, mats):
        if mat != current:
            out.append(f"usemtl {mat}")
            current = mat
        corners = []
        for i in tri:
            k = int(i) + 1
            if has_t and has_n:
                corners.append(f"{k}/{k}/{k}")
            elif has_n:
                corners.append(f"{k}//{k}")
            elif has_t:
                corners.append(f"{k}/{k}")
            else:
                corners.append(str(k))
        out.append("f " + " ".join(corners))
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------------------
# PNG / MTL


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def load_png(data: bytes, name: str = "texture") -> Texture:
    """Decode an 8-bit, non-interlaced PNG to linear RGBA."""
    try:
        img = Image.open(io.BytesIO(data))
    except Exception as exc:
        raise AssetError(f"{name}: not a readable PNG ({exc})") from None
    if img.format != "PNG":
        raise AssetError(f"{name}: expected PNG, got {img.format}")
    if img.info.get("interlace"):
        raise AssetError(f"{name}: interlaced PNG is not supported")
    if img.mode not in ("L", "LA", "RGB", "RGBA", "P"):
        raise AssetError(f"{name}: unsupported PNG mode {img.mode!r} (8-bit RGB/RGBA only)")
    rgba = np.asarray(img.convert("RGBA"), dtype=np.float64) / 255.0
    out = np.empty_like(rgba)
    out[..., :3] = srgb_to_linear(rgba[..., :3])
    out[..., 3] = rgba[..., 3]
    return Texture(name, out.astype(np.float32))


def parse_mtl(data: Union[str, bytes], base_dir: Union[str, Path, None] = None) -> list[Material]:
    base = Path(base_dir) if base_dir is not None else Path(".")
    textures: dict[Path, Texture] = {}

    def texture(rel: str) -> Texture:
        path = base / rel
        if path not in textures:
            if not path.is_file():
                raise AssetError(f"missing texture file {path}")
            textures[path] = load_png(path.read_bytes(), name=str(rel))
        return textures[path]

    mats: list[Material] = []
    cur: Optional[dict] = None
    for lineno, raw in enumerate(_text(data).splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        args = rest.split()
        if key == "newmtl":
            if cur is not None:
                mats.append(_material(cur))
            cur = {"name": rest.strip()}
            continue
        if cur is None:
            continue
        try:
            if key == "Kd":
                cur["base_color"] = tuple(float(a) for a in args[:3])
            elif key == "d":
                cur["opacity"] = float(args[0])
            elif key == "Tr":
                cur["opacity"] = 1.0 - float(args[0])
            elif key == "Pm":
                cur["metallic"] = float(args[0])
            elif key == "Pr":
                cur["roughness"] = max(MIN_ROUGHNESS, float(args[0]))
            elif key == "map_Kd":
                cur["base_color_map"] = texture(args[-1])
            elif key == "map_d":
                cur["opacity_map"] = texture(args[-1])
            elif key == "map_Pm":
                cur["metallic_map"] = texture(args[-1])
            elif key == "map_Pr":
                cur["roughness_map"] = texture(args[-1])
        except AssetError:
            raise
        except (IndexError, ValueError):
            raise AssetError(f"line {lineno}: malformed {key!r} record") from None
    if cur is not None:
        mats.append(_material(cur))
    return mats


def _material(fields: dict) -> Material:
    # scalar factors multiply their maps; a map without Kd is taken as-is
    if "base_color_map" in fields and "base_color" not in fields:
        fields = {**fields, "base_color": (1.0, 1.0, 1.0)}
    return Material(**fields)


# ----------------------------------------------------------------------------
# rig / morph sidecar


@dataclass(frozen=True)
class RigBundle:
    rig: Optional[Rig]
    morphs: tuple[MorphTarget, ...]
    # expression name -> {morph name: weight}, every morph listed
    expressions: dict


def load_rig_sidecar(data: Union[str, bytes], mesh: Mesh) -> RigBundle:
    """Parse a rig sidecar against ``mesh``. Vertex indices in the sidecar
    refer to OBJ positions (``mesh.source_count`` of them)."""
    try:
        doc = json.loads(_text(data))
    except json.JSONDecodeError as exc:
        raise AssetError(f"rig sidecar is not valid JSON: {exc}") from None
    unknown = set(doc) - {"bones", "weights", "morphs", "expressions"}
    if unknown:
        raise AssetError(f"rig sidecar: unknown key(s) {sorted(unknown)}")
    n_src = mesh.source_count
    src = mesh.source_map()

    rig = None
    bones_doc = doc.get("bones", [])
    if bones_doc:
        names = [b["name"] for b in bones_doc]
        if len(set(names)) != len(names):
            raise AssetError("rig sidecar: duplicate bone names")
        index = {n: i for i, n in enumerate(names)}
        bones = []
        for b in bones_doc:
            parent = b.get("parent")
            if parent is not None and parent not in index:
                raise AssetError(f"rig sidecar: bone {b['name']!r} has unknown parent {parent!r}")
            pivot = tuple(float(x) for x in b["pivot"])
            bones.append(Bone(b["name"], pivot, None if parent is None else index[parent]))

        weights_doc = doc.get("weights")
        if weights_doc is None:
            if len(bones) != 1:
                raise AssetError("rig sidecar: 'weights' is required when there is more than one bone")
            weights_doc = [[[names[0], 1.0]]] * n_src
        if len(weights_doc) != n_src:
            raise AssetError(f"rig sidecar: {len(weights_doc)} weight entries for {n_src} vertices")
        bi = np.full((n_src, MAX_INFLUENCES), -1, np.int64)
        bw = np.zeros((n_src, MAX_INFLUENCES))
        for v, pairs in enumerate(weights_doc):
            if len(pairs) > MAX_INFLUENCES:
                raise AssetError(f"rig sidecar: vertex {v} has {len(pairs)} influences (max {MAX_INFLUENCES})")
            for k, (bone, w) in enumerate(pairs):
                if bone not in index:
                    raise AssetError(f"rig sidecar: vertex {v} weight references missing bone {bone!r}")
                if w < 0:
                    raise AssetError(f"rig sidecar: vertex {v} has negative weight")
                bi[v, k], bw[v, k] = index[bone], float(w)
            total = bw[v].sum()
            if total <= 0:
                raise AssetError(f"rig sidecar: vertex {v} has zero total weight")
            bw[v] /= total
        rig = Rig(tuple(bones), bi[src], bw[src])

    morphs = []
    for m in doc.get("morphs", []):
        idx = np.asarray(m.get("indices", []), dtype=np.int64)
        deltas = np.asarray(m.get("deltas", []), dtype=np.float64).reshape(-1, 3)
        if len(idx) != len(deltas):
            raise AssetError(f"morph {m['name']!r}: {len(idx)} indices but {len(deltas)} deltas")
        if idx.size and (idx.min() < 0 or idx.max() >= n_src):
            raise AssetError(f"morph {m['name']!r}: vertex index out of range ({n_src} vertices)")
        # expand source indices to every split copy of that position
        delta_of = {int(i): d for i, d in zip(idx, deltas)}
        out_i = [k for k, s in enumerate(src) if int(s) in delta_of]
        out_d = [delta_of[int(src[k])] for k in out_i]
        morphs.append(MorphTarget(m["name"], np.array(out_i, np.int64), np.array(out_d).reshape(-1, 3)))
    morph_names = [m.name for m in morphs]
    if len(set(morph_names)) != len(morph_names):
        raise AssetError("rig sidecar: duplicate morph names")

    expressions = {}
    for ename, weights in doc.get("expressions", {}).items():
        bad = set(weights) - set(morph_names)
        if bad:
            raise AssetError(f"expression {ename!r} references unknown morph(s) {sorted(bad)}")
        for mname, w in weights.items():
            if not 0.0 <= float(w) <= 1.0:
                raise AssetError(f"expression {ename!r}: weight for {mname!r} outside [0, 1]")
        if ename == "neutral" and any(float(w) != 0.0 for w in weights.values()):
            raise AssetError("expression 'neutral' must have all-zero weights")
        expressions[ename] = {m: float(weights.get(m, 0.0)) for m in morph_names}
    expressions["neutral"] = {m: 0.0 for m in morph_names}
    return RigBundle(rig, tuple(morphs), expressions)


# ----------------------------------------------------------------------------
# scene configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Vec3 = tuple[float, float, float]


def _ordered(name: str, r):
    if r[0] > r[1]:
        raise ValueError(f"{name} range min must be <= max, got {list(r)}")
    return r


class EulerConfig(_Strict):
    yaw: float = 0.0
    pitch: float = Field(0.0, gt=-90.0, lt=90.0)
    roll: float = 0.0


class TransformConfig(_Strict):
    translation: Vec3 = (0.0, 0.0, 0.0)
    rotation_deg: EulerConfig = EulerConfig()
    scale: float = Field(1.0, gt=0.0)


class IdentityConfig(_Strict):
    name: str = Field(pattern=r"^[A-Za-z0-9_.-]+$")
    mesh: str
    rig: Optional[str] = None
    transform: TransformConfig = TransformConfig()


class BackgroundConfig(_Strict):
    mesh: str
    transform: TransformConfig = TransformConfig()


class AssetsConfig(_Strict):
    identities: list[IdentityConfig] = Field(min_length=1)
    background: list[BackgroundConfig] = []

    @field_validator("identities")
    @classmethod
    def _unique_names(cls, v):
        names = [i.name for i in v]
        if len(set(names)) != len(names):
            raise ValueError("identity names must be unique")
        return v


class LightConfig(_Strict):
    kind: Literal["point", "sun", "spot", "area"]
    intensity: float = Field(ge=0.0)
    color: Vec3 = (1.0, 1.0, 1.0)
    position: Optional[Vec3] = None
    direction: Optional[Vec3] = None
    cone_angle_deg: float = Field(45.0, gt=0.0, le=90.0)
    falloff: float = Field(0.2, ge=0.0, le=1.0)
    center: Optional[Vec3] = None
    edge_u: Optional[Vec3] = None
    edge_v: Optional[Vec3] = None
    name: str = ""

    @model_validator(mode="after")
    def _fields_for_kind(self):
        need = {
            "point": ("position",),
            "spot": ("position", "direction"),
            "sun": ("direction",),
            "area": ("center", "edge_u", "edge_v"),
        }[self.kind]
        missing = [f for f in need if getattr(self, f) is None]
        if missing:
            raise ValueError(f"{self.kind} light needs {', '.join(missing)}")
        if self.direction is not None and abs(float(np.linalg.norm(self.direction)) - 1.0) > 1e-6:
            raise ValueError("light direction must be a unit vector")
        return self


class CameraConfig(_Strict):
    fov_deg: float = Field(60.0, gt=0.0, lt=180.0)
    sensor_mm: float = Field(36.0, gt=0.0)
    near_m: float = Field(0.01, gt=0.0)
    far_m: float = 5.0
    resolution: tuple[int, int] = (640, 480)
    orientation_deg: EulerConfig = EulerConfig()
    # Point the camera aims at; defaults to the pivot of ``target_bone``.
    target: Optional[Vec3] = None
    target_bone: str = "head"

    @field_validator("resolution")
    @classmethod
    def _positive(cls, v):
        if v[0] < 1 or v[1] < 1:
            raise ValueError("resolution must be positive")
        return v

    @model_validator(mode="after")
    def _clip_order(self):
        if not self.near_m < self.far_m:
            raise ValueError("near must be < far")
        return self


class GridSteps(_Strict):
    yaw: int = Field(5, ge=1)
    pitch: int = Field(3, ge=1)
    roll: int = Field(3, ge=1)


class PosesConfig(_Strict):
    count: int = Field(10, ge=1)
    mode: Literal["uniform_random", "grid"] = "uniform_random"
    yaw_deg: tuple[float, float] = (-30.0, 30.0)
    pitch_deg: tuple[float, float] = (-15.0, 15.0)
    roll_deg: tuple[float, float] = (-15.0, 15.0)
    distance_m: tuple[float, float] = (0.7, 1.0)
    grid_steps: GridSteps = GridSteps()
    bones: list[str] = ["head"]
    expressions: list[str] = list(DEFAULT_EXPRESSIONS)
    expression_mode: Literal["cycle", "cross_product"] = "cycle"

    @field_validator("yaw_deg", "pitch_deg", "roll_deg", "distance_m")
    @classmethod
    def _range(cls, v, info):
        return _ordered(info.field_name, v)

    @field_validator("pitch_deg")
    @classmethod
    def _gimbal(cls, v):
        if not (-90.0 < v[0] and v[1] < 90.0):
            raise ValueError("pitch range must stay inside (-90, 90)")
        return v

    @field_validator("distance_m")
    @classmethod
    def _positive_distance(cls, v):
        if v[0] <= 0:
            raise ValueError("camera distance must be positive")
        return v

    @field_validator("expressions")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("at least one expression is required")
        return v


class RenderConfig(_Strict):
    samples_per_pixel: int = Field(256, ge=1)
    max_bounces: int = Field(6, ge=1)
    branched: bool = False
    branch_light_samples: int = Field(4, ge=1)
    passes: list[Literal["rgb", "depth", "id"]] = ["rgb", "depth", "id"]
    # Uniform environment radiance seen by rays that leave the scene.
    background: Vec3 = (0.0, 0.0, 0.0)


class OutputConfig(_Strict):
    directory: str = "dataset"
    formats: list[Literal["png", "exr", "vis", "id"]] = ["png", "exr", "vis", "id"]


class SceneConfig(_Strict):
    assets: AssetsConfig
    lights: list[LightConfig] = []
    camera: CameraConfig = CameraConfig()
    poses: PosesConfig = PosesConfig()
    render: RenderConfig = RenderConfig()
    output: OutputConfig = OutputConfig()
    seed: int = Field(0, ge=0, lt=2**64)
    # Directory relative asset paths are resolved against (not part of the document).
    base_dir: Optional[str] = Field(None, exclude=True)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() or self.base_dir is None else Path(self.base_dir) / p


def _format_error(err: dict) -> str:
    loc = ".".join(str(x) for x in err["loc"])
    msg = err["msg"]
    if msg.startswith("Value error, "):
        msg = msg[len("Value error, ") :]
    if err["type"] == "extra_forbidden":
        msg = "unknown key"
    return f"{loc}: {msg}" if loc else msg


def load_scene_config(data: Union[str, bytes], base_dir: Union[str, Path, None] = None) -> SceneConfig:
    try:
        doc = json.loads(_text(data))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"not valid JSON: {exc}"]) from None
    if not isinstance(doc, dict):
        raise ConfigError(["top level must be an object"])
    if "base_dir" in doc:
        raise ConfigError(["base_dir: unknown key"])
    try:
        cfg = SceneConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError([_format_error(e) for e in exc.errors()]) from None
    if base_dir is not None:
        cfg = cfg.model_copy(update={"base_dir": str(base_dir)})
    return cfg
