"""Ground-truth serialization: EXR depth, PNG color, depth visualization and
per-frame manifests.

EXR layout written by :func:`write_exr_depth` (all little-endian)::

    76 2f 31 01            magic
    02 00 00 00            version 2, single-part scanline
    header attributes      channels, compression(NONE), dataWindow,
                           displayWindow, lineOrder(INCREASING_Y),
                           pixelAspectRatio, screenWindowCenter,
                           screenWindowWidth; then a 0 byte
    height x uint64        absolute offset of each scanline block
    per scanline           int32 y, int32 byte count, width x float32 "Z"
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

EXR_MAGIC = b"\x76\x2f\x31\x01"
_FLOAT = 2


class ExrError(ValueError):
    pass


def _attr(name: str, type_: str, payload: bytes) -> bytes:
    return name.encode() + b"\0" + type_.encode() + b"\0" + struct.pack("<i", len(payload)) + payload


def write_exr_depth(depth: np.ndarray, channel: str = "Z") -> bytes:
    d = np.asarray(depth, dtype="<f4")
    if d.ndim != 2 or d.shape[0] == 0 or d.shape[1] == 0:
        raise ExrError(f"depth buffer must be 2-D and non-empty, got shape {d.shape}")
    h, w = d.shape
    box = struct.pack("<iiii", 0, 0, w - 1, h - 1)
    chlist = channel.encode() + b"\0" + struct.pack("<iB3xii", _FLOAT, 0, 1, 1) + b"\0"
    header = b"".join(
        [
            EXR_MAGIC,
            struct.pack("<i", 2),
            _attr("channels", "chlist", chlist),
            _attr("compression", "compression", b"\0"),
            _attr("dataWindow", "box2i", box),
            _attr("displayWindow", "box2i", box),
            _attr("lineOrder", "lineOrder", b"\0"),
            _attr("pixelAspectRatio", "float", struct.pack("<f", 1.0)),
            _attr("screenWindowCenter", "v2f", struct.pack("<ff", 0.0, 0.0)),
            _attr("screenWindowWidth", "float", struct.pack("<f", 1.0)),
            b"\0",
        ]
    )
    line_bytes = 4 * w
    block = 8 + line_bytes
    first = len(header) + 8 * h
    offsets = struct.pack(f"<{h}Q", *(first + y * block for y in range(h)))
    out = io.BytesIO()
    out.write(header)
    out.write(offsets)
    for y in range(h):
        out.write(struct.pack("<ii", y, line_bytes))
        out.write(d[y].tobytes())
    return out.getvalue()


def read_exr_depth(data: bytes, channel: str = "Z") -> np.ndarray:
    """Read back the subset written by :func:`write_exr_depth`."""
    if data[:4] != EXR_MAGIC:
        raise ExrError("not an OpenEXR file")
    pos = 8
    attrs = {}
    while data[pos] != 0:
        end = data.index(b"\0", pos)
        name = data[pos:end].decode()
        tend = data.index(b"\0", end + 1)
        type_ = data[end + 1 : tend].decode()
        (size,) = struct.unpack_from("<i", data, tend + 1)
        attrs[name] = (type_, data[tend + 5 : tend + 5 + size])
        pos = tend + 5 + size
    pos += 1
    if attrs["compression"][1] != b"\0":
        raise ExrError("only uncompressed EXR is supported")
    chl = attrs["channels"][1]
    names = []
    p = 0
    while chl[p] != 0:
        e = chl.index(b"\0", p)
        ptype = struct.unpack_from("<i", chl, e + 1)[0]
        names.append((chl[p:e].decode(), ptype))
        p = e + 17
    if names != [(channel, _FLOAT)]:
        raise ExrError(f"expected one float channel {channel!r}, found {names}")
    x0, y0, x1, y1 = struct.unpack("<iiii", attrs["dataWindow"][1])
    w, h = x1 - x0 + 1, y1 - y0 + 1
    offsets = struct.unpack_from(f"<{h}Q", data, pos)
    out = np.empty((h, w), dtype="<f4")
    for off in offsets:
        y, size = struct.unpack_from("<ii", data, off)
        out[y - y0] = np.frombuffer(data, dtype="<f4", count=w, offset=off + 8)
    return out.astype(np.float32)


def linear_to_srgb8(rgb: np.ndarray) -> np.ndarray:
    c = np.clip(np.nan_to_num(np.asarray(rgb, dtype=np.float64), nan=0.0), 0.0, 1.0)
    s = np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1.0 / 2.4) - 0.055)
    return np.floor(s * 255.0 + 0.5).astype(np.uint8)


def _png(arr: np.ndarray) -> bytes:
    # uint8 (h, w) -> L, (h, w, 3) -> RGB, uint16 (h, w) -> I;16
    buf = io.BytesIO()
    img = Image.fromarray(np.ascontiguousarray(arr))
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write_png_rgb(rgb: np.ndarray) -> bytes:
    """Clamp linear RGB to [0, 1], sRGB-encode and write an 8-bit RGB PNG."""
    return _png(linear_to_srgb8(rgb))


def depth_to_vis(depth: np.ndarray) -> np.ndarray:
    """Stretch finite depths linearly onto 0..255; missing depth maps to 0."""
    d = np.asarray(depth, dtype=np.float64)
    out = np.zeros(d.shape, dtype=np.uint8)
    finite = np.isfinite(d)
    if not finite.any():
        return out
    lo, hi = d[finite].min(), d[finite].max()
    if hi == lo:
        return out
    scaled = (d[finite] - lo) / (hi - lo) * 255.0
    out[finite] = np.floor(scaled + 0.5).astype(np.uint8)
    return out


def write_png_gray(img: np.ndarray) -> bytes:
    return _png(np.asarray(img, dtype=np.uint8))


def write_png_id(ids: np.ndarray) -> bytes:
    """Object ids as a 16-bit grayscale PNG."""
    ids = np.asarray(ids)
    if ids.size and ids.max() > 0xFFFF:
        raise ValueError("object ids above 65535 do not fit a 16-bit PNG")
    return _png(ids.astype(np.uint16))


# ----------------------------------------------------------------------------
# manifests


def _number(obj) -> str:
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    x = float(obj)
    if not math.isfinite(x):
        raise ValueError(f"non-finite number {x} cannot be stored in a manifest")
    if x == 0.0:
        x = 0.0  # drop the sign of -0.0
    return format(x, ".17g")


def _canon(obj, indent: Optional[int], level: int) -> str:
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, (int, float, np.integer, np.floating)):
        return _number(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        items = [(json.dumps(str(k), ensure_ascii=False), obj[k]) for k in sorted(obj)]
        parts = [f"{k}: {_canon(v, indent, level + 1)}" for k, v in items]
        return _wrap("{", "}", parts, indent, level)
    if isinstance(obj, (list, tuple)):
        flat = all(isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool) for x in obj)
        parts = [_canon(x, indent, level + 1) for x in obj]
        return _wrap("[", "]", parts, None if flat else indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _wrap(open_, close, parts, indent, level) -> str:
    if not parts:
        return open_ + close
    if indent is None:
        return open_ + ", ".join(parts) + close
    pad = " " * (indent * (level + 1))
    return open_ + "\n" + ",\n".join(pad + p for p in parts) + "\n" + " " * (indent * level) + close


def canonical_json(obj, indent: Optional[int] = 2) -> str:
    """Sorted keys, 17 significant digits per float, trailing newline.

    ``indent=None`` gives a single line (used for ``index.jsonl``)."""
    return _canon(obj, indent, 0) + "\n"


@dataclass(frozen=True)
class FrameManifest:
    frame_index: int
    identity_id: str
    expression_name: str
    bone_rotations: dict  # bone -> {"yaw", "pitch", "roll"} degrees
    head_pose_camera: dict  # {"yaw", "pitch", "roll"} degrees
    K: tuple  # 9 floats, row-major
    camera_to_world: tuple  # 16 floats, row-major
    near_m: float
    far_m: float
    lights: tuple
    seed: int
    files: dict
    morph_weights: dict = field(default_factory=dict)
    camera_distance_m: float = 0.0
    euler_convention: str = "YXZ-intrinsic"
    depth_semantics: str = "planar_z"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.K) != 9 or len(self.camera_to_world) != 16:
            raise ValueError("K must have 9 entries and camera_to_world 16 (row-major)")

    def to_dict(self) -> dict:
        d = {
            "frame_index": self.frame_index,
            "identity_id": self.identity_id,
            "expression_name": self.expression_name,
            "morph_weights": dict(self.morph_weights),
            "bone_rotations": {b: dict(r) for b, r in self.bone_rotations.items()},
            "euler_convention": self.euler_convention,
            "head_pose_camera": dict(self.head_pose_camera),
            "camera": {
                "K": [float(x) for x in self.K],
                "camera_to_world": [float(x) for x in self.camera_to_world],
                "near_m": self.near_m,
                "far_m": self.far_m,
                "distance_m": self.camera_distance_m,
            },
            "lights": [dict(lt) for lt in self.lights],
            "seed": self.seed,
            "depth_semantics": self.depth_semantics,
            "depth_encoding": {"format": "exr", "channel": "Z", "type": "float32", "missing": "+inf"},
            "files": dict(self.files),
        }
        for k, v in self.extra.items():
            d.setdefault(k, v)
        return d


def write_manifest(manifest: FrameManifest) -> str:
    return canonical_json(manifest.to_dict())
