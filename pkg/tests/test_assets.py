import io
import json
import logging

import numpy as np
import pytest
import pywavefront
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from synthface.assets import (
    AssetError,
    ConfigError,
    ObjParseError,
    load_png,
    load_rig_sidecar,
    load_scene_config,
    parse_mtl,
    parse_obj,
    parse_obj_full,
    serialize_obj,
)
from synthface.scene import Material, Scene, SceneObject, validate_scene
from synthface.shapes import box, quad, uv_sphere

TRI = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"


def png_bytes(arr, mode=None, **save):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode).save(buf, format="PNG", **save)
    return buf.getvalue()


def srgb_eotf(c):
    # textbook piecewise sRGB decoding, written independently of the package
    return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4


# OBJ


def test_single_triangle():
    m = parse_obj(TRI)
    assert m.vertices.shape == (3, 3)
    assert m.triangles.tolist() == [[0, 1, 2]]


def test_quad_is_fanned_from_first_vertex():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_pentagon_fan():
    text = "".join(f"v {x} {y} 0\n" for x, y in [(0, 0), (1, 0), (2, 1), (1, 2), (0, 1)]) + "f 1 2 3 4 5\n"
    assert parse_obj(text).triangles.tolist() == [[0, 1, 2], [0, 2, 3], [0, 3, 4]]


def test_negative_indices_resolve_against_current_count():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    assert m.triangles.tolist() == [[0, 1, 2]]


def _oracle_triangles(path):
    scene = pywavefront.Wavefront(str(path), collect_faces=True, create_materials=True)
    verts = np.array(scene.vertices)
    return [verts[f].tolist() for mesh in scene.mesh_list for f in mesh.faces]


def test_relative_indices_agree_with_independent_reader(tmp_path):
    text = (
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n"
        "v 5 5 5\nv 6 5 5\nf -5 -1 -2\nf 1 -1 3\n"
    )
    path = tmp_path / "rel.obj"
    path.write_text(text)
    ours = parse_obj(text)
    got = [ours.vertices[t].tolist() for t in ours.triangles]
    assert got == _oracle_triangles(path)


@pytest.mark.parametrize("face, lineno", [("f 0 1 2", 4), ("f 1 2 9", 4), ("f -4 1 2", 4), ("f 1 2", 4)])
def test_bad_face_reports_line_number(face, lineno):
    with pytest.raises(ObjParseError) as exc:
        parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\n" + face + "\n")
    assert exc.value.lineno == lineno
    assert f"line {lineno}" in str(exc.value)


def test_unknown_records_are_counted_and_warned(caplog):
    with caplog.at_level(logging.WARNING):
        res = parse_obj_full("# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nl 1 2\ncurv 0 1\no thing\ns off\nf 1 2 3\n")
    assert res.ignored_records == 2
    assert "ignored 2" in caplog.text


def test_usemtl_and_mtllib_are_recorded():
    res = parse_obj_full("mtllib a.mtl b.mtl\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nusemtl skin\nf 1 2 3\nusemtl eye\nf 2 4 3\n")
    assert res.mtllibs == ["a.mtl", "b.mtl"]
    assert res.mesh.triangle_materials == ("skin", "eye")


def test_seam_splits_vertex_and_keeps_source_index():
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvt 1 1\nvt 0.5 0.5\n" "f 1/1 2/2 3/3\nf 2/5 4/4 3/3\n"
    m = parse_obj(text)
    assert len(m.vertices) == 5
    assert m.source_count == 4
    assert m.source_index.tolist() == [0, 1, 2, 3, 1]
    assert m.uvs[4].tolist() == [0.5, 0.5]
    assert np.array_equal(m.vertices[4], m.vertices[1])


meshes = st.sampled_from(
    [
        lambda: quad((0.1, 0.2, -1.0), (0.5, 0.25)),
        lambda: box((1.0, 2.0, 3.0), 0.3),
        lambda: uv_sphere((0.0, 0.5, 0.0), 0.2, 5, 7),
    ]
)


@settings(max_examples=10)
@given(meshes)
def test_serialize_then_parse_is_identity(make):
    mesh = make()
    back = parse_obj(serialize_obj(mesh))
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    if mesh.uvs is not None:
        # OBJ cannot carry a uv for a vertex no face references
        used = np.unique(mesh.triangles)
        assert np.array_equal(back.uvs[used], mesh.uvs[used])


def test_loading_is_bit_deterministic():
    text = serialize_obj(uv_sphere((0, 0, 0), 1.0, 6, 9)).encode()
    a, b = parse_obj(text), parse_obj(text)
    assert a.vertices.tobytes() == b.vertices.tobytes()
    assert a.normals.tobytes() == b.normals.tobytes()


# PNG


@pytest.mark.parametrize("value", [0, 128, 255])
def test_png_linearization(value):
    tex = load_png(png_bytes([[[value, value, value]]]))
    expected = srgb_eotf(value / 255.0)
    np.testing.assert_allclose(tex.data[0, 0, :3], [expected] * 3, rtol=1e-6)
    assert tex.data[0, 0, 3] == 1.0


def test_png_128_is_about_0_2159():
    assert abs(load_png(png_bytes([[[128, 128, 128]]])).data[0, 0, 0] - 0.2159) < 5e-5


def test_png_alpha_is_not_linearized():
    tex = load_png(png_bytes([[[10, 20, 30, 128]]], "RGBA"))
    assert tex.data[0, 0, 3] == np.float32(128 / 255)


def test_png_rejects_16_bit_and_interlaced():
    with pytest.raises(AssetError, match="unsupported PNG mode"):
        buf = io.BytesIO()
        Image.fromarray(np.full((2, 2), 300, np.uint16)).save(buf, format="PNG")
        load_png(buf.getvalue())
    buf = io.BytesIO()
    Image.new("RGB", (2, 2)).save(buf, format="PNG")
    data = bytearray(buf.getvalue())
    # IHDR interlace byte: 8 signature + 8 chunk header + 12
    data[8 + 8 + 12] = 1
    with pytest.raises(AssetError):
        load_png(bytes(data))


# MTL


def test_mtl_defaults_and_kd():
    (m,) = parse_mtl("newmtl skin\nKd 0.8 0.6 0.5\n")
    assert m.name == "skin"
    assert m.base_color == (0.8, 0.6, 0.5)
    assert (m.opacity, m.metallic, m.roughness) == (1.0, 0.0, 0.5)


def test_mtl_channels():
    mats = parse_mtl("newmtl a\nd 0.4\nPm 0.7\nPr 0.005\nnewmtl b\nTr 0.25\n")
    assert mats[0].opacity == 0.4
    assert mats[0].metallic == 0.7
    assert mats[0].roughness == 0.01
    assert mats[1].opacity == 0.75


def test_mtl_texture_resolved_relative_to_base(tmp_path):
    (tmp_path / "tex").mkdir()
    (tmp_path / "tex" / "skin.png").write_bytes(png_bytes(np.full((2, 3, 3), 255)))
    (m,) = parse_mtl("newmtl s\nmap_Kd tex/skin.png\n", base_dir=tmp_path)
    assert m.base_color_map.data.shape == (2, 3, 4)
    # a map without Kd is not tinted
    assert m.base_color == (1.0, 1.0, 1.0)


def test_mtl_kd_kept_alongside_map(tmp_path):
    (tmp_path / "skin.png").write_bytes(png_bytes(np.full((2, 2, 3), 255)))
    (m,) = parse_mtl("newmtl s\nKd 0.5 0.25 1\nmap_Kd skin.png\n", base_dir=tmp_path)
    assert m.base_color == (0.5, 0.25, 1.0)
    assert m.base_color_map is not None


def test_mtl_missing_texture_names_path(tmp_path):
    with pytest.raises(AssetError, match="nope.png"):
        parse_mtl("newmtl s\nmap_Kd nope.png\n", base_dir=tmp_path)


# rig sidecar


def test_single_bone_without_weights():
    mesh = parse_obj(TRI)
    b = load_rig_sidecar(json.dumps({"bones": [{"name": "head", "pivot": [0, 1.5, 0]}]}), mesh)
    assert b.rig.bone_indices[:, 0].tolist() == [0, 0, 0]
    assert b.rig.bone_weights[:, 0].tolist() == [1.0, 1.0, 1.0]
    assert b.expressions == {"neutral": {}}


def test_weights_normalized():
    mesh = parse_obj(TRI)
    doc = {
        "bones": [{"name": "shoulder", "pivot": [0, 1.35, 0]}, {"name": "head", "pivot": [0, 1.5, 0], "parent": "shoulder"}],
        "weights": [[["shoulder", 0.5], ["head", 0.6]]] * 3,
    }
    rig = load_rig_sidecar(json.dumps(doc), mesh).rig
    assert rig.bones[1].parent == 0
    np.testing.assert_allclose(rig.bone_weights[0, :2], [5 / 11, 6 / 11], rtol=0, atol=1e-15)


def test_neutral_preset_is_zero_vector():
    mesh = parse_obj(TRI)
    doc = {
        "morphs": [{"name": n, "indices": [0], "deltas": [[0, 0, 0.01]]} for n in ("sad", "angry", "happy", "scared")],
        "expressions": {"happy": {"happy": 1.0}},
    }
    b = load_rig_sidecar(json.dumps(doc), mesh)
    assert b.expressions["neutral"] == {"sad": 0.0, "angry": 0.0, "happy": 0.0, "scared": 0.0}
    assert b.expressions["happy"]["happy"] == 1.0 and b.expressions["happy"]["sad"] == 0.0


@pytest.mark.parametrize(
    "doc, msg",
    [
        ({"bones": [{"name": "head", "pivot": [0, 0, 0]}], "weights": [[["neck", 1.0]]] * 3}, "missing bone 'neck'"),
        ({"morphs": [{"name": "sad", "indices": [3], "deltas": [[0, 0, 1]]}]}, "out of range"),
        ({"expressions": {"sad": {"sad": 1.0}}}, "unknown morph"),
        ({"morphs": [{"name": "m", "indices": [0], "deltas": [[0, 0, 1]]}], "expressions": {"neutral": {"m": 0.5}}}, "all-zero"),
        ({"skeleton": []}, "unknown key"),
        ({"bones": [{"name": "a", "pivot": [0, 0, 0]}, {"name": "b", "pivot": [0, 0, 0]}]}, "'weights' is required"),
    ],
)
def test_sidecar_errors(doc, msg):
    with pytest.raises(AssetError, match=msg):
        load_rig_sidecar(json.dumps(doc), parse_obj(TRI))


def test_morph_indices_expand_to_split_vertices():
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvt 1 1\nvt 0.5 0.5\n" "f 1/1 2/2 3/3\nf 2/5 4/4 3/3\n"
    mesh = parse_obj(text)
    b = load_rig_sidecar(json.dumps({"morphs": [{"name": "m", "indices": [1], "deltas": [[0, 0, 1]]}]}), mesh)
    assert b.morphs[0].indices.tolist() == [1, 4]


def test_loaded_assets_validate(tmp_path):
    mesh = parse_obj(serialize_obj(uv_sphere((0, 1.5, 0), 0.1, 6, 8)))
    bundle = load_rig_sidecar(json.dumps({"bones": [{"name": "head", "pivot": [0, 1.5, 0]}]}), mesh)
    s = Scene([SceneObject(mesh, rig=bundle.rig)], {"default": Material("default")})
    assert validate_scene(s) == []


# scene config

MINIMAL = {"assets": {"identities": [{"name": "a", "mesh": "a.obj"}]}}


def test_config_defaults():
    cfg = load_scene_config(json.dumps({**MINIMAL, "camera": {}}))
    c = cfg.camera
    assert (c.fov_deg, c.sensor_mm, c.near_m, c.far_m) == (60.0, 36.0, 0.01, 5.0)
    assert c.resolution == (640, 480)
    p = cfg.poses
    assert p.yaw_deg == (-30.0, 30.0)
    assert p.pitch_deg == (-15.0, 15.0) and p.roll_deg == (-15.0, 15.0)
    assert p.distance_m == (0.7, 1.0)
    assert p.expressions == ["neutral", "sad", "angry", "happy", "scared"]
    assert p.expression_mode == "cycle"
    assert p.bones == ["head"]
    assert cfg.seed == 0


def test_config_near_far():
    with pytest.raises(ConfigError) as exc:
        load_scene_config(json.dumps({**MINIMAL, "camera": {"near_m": 6, "far_m": 5}}))
    assert exc.value.violations == ["camera: near must be < far"]


def test_config_resolution_verbatim():
    cfg = load_scene_config(json.dumps({**MINIMAL, "camera": {"resolution": [64, 48]}}))
    assert cfg.camera.resolution == (64, 48)


def test_config_unknown_keys_and_every_violation_listed():
    doc = {**MINIMAL, "camra": {}, "poses": {"yaw_deg": [10, -10], "count": 0}, "seed": -1}
    with pytest.raises(ConfigError) as exc:
        load_scene_config(json.dumps(doc))
    v = exc.value.violations
    assert "camra: unknown key" in v
    assert any(s.startswith("poses.yaw_deg") for s in v)
    assert any(s.startswith("poses.count") for s in v)
    assert any(s.startswith("seed") for s in v)
    assert len(v) == 4


def test_config_light_requirements():
    doc = {**MINIMAL, "lights": [{"kind": "spot", "intensity": 1, "position": [0, 0, 0]}, {"kind": "sun", "intensity": 1, "direction": [0, 0, 2]}]}
    with pytest.raises(ConfigError) as exc:
        load_scene_config(json.dumps(doc))
    assert any("needs direction" in s for s in exc.value.violations)
    assert any("unit vector" in s for s in exc.value.violations)


def test_config_seed_is_u64():
    cfg = load_scene_config(json.dumps({**MINIMAL, "seed": 2**64 - 1}))
    assert cfg.seed == 2**64 - 1
    with pytest.raises(ConfigError):
        load_scene_config(json.dumps({**MINIMAL, "seed": 2**64}))
