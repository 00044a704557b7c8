"""Procedural demo assets: stylized rigged heads with expression morphs, a
backdrop and a scene config exercising every light kind.

    python -m synthface.demo OUT_DIR [--identities N]
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from . import rng

HEAD_CENTER = np.array([0.0, 1.62, 0.0])
SHOULDER_PIVOT = (0.0, 1.35, 0.0)
HEAD_PIVOT = (0.0, 1.50, 0.0)
N_LAT, N_LON = 40, 64
TEX_W, TEX_H = 256, 128


def _ellipsoid(center, radii, n_lat=N_LAT, n_lon=N_LON):
    """Lat/long ellipsoid with poles on +-Y; u = 0.5 faces +Z.

    Returns (positions, uvs, unit directions, triangles)."""
    dirs, uvs = [], []
    for i in range(n_lat + 1):
        theta = math.pi * i / n_lat
        for j in range(n_lon + 1):
            phi = 2.0 * math.pi * j / n_lon - math.pi
            dirs.append((math.sin(theta) * math.sin(phi), math.cos(theta), math.sin(theta) * math.cos(phi)))
            uvs.append((j / n_lon, 1.0 - i / n_lat))
    dirs = np.array(dirs)
    pos = np.asarray(center) + dirs * np.asarray(radii)
    row = n_lon + 1
    tris = []
    for i in range(n_lat):
        for j in range(n_lon):
            a, b = i * row + j, i * row + j + 1
            c, d = a + row, b + row
            if i != 0:
                tris.append((a, c, b))
            if i != n_lat - 1:
                tris.append((b, c, d))
    return pos, np.array(uvs), dirs, np.array(tris)


def _bump(d, cx, cy, sx, sy):
    """Gaussian patch on the front of the unit sphere, centered at (cx, cy)."""
    return np.exp(-(((d[:, 0] - cx) / sx) ** 2 + ((d[:, 1] - cy) / sy) ** 2)) * (d[:, 2] > 0.2)


def identity_params(seed: int, k: int) -> dict:
    u = lambda ch, lo, hi: rng.uniform(lo, hi, seed, k, ch)  # noqa: E731
    return {
        "radii": (u(0, 0.072, 0.082), u(1, 0.100, 0.115), u(2, 0.090, 0.100)),
        "nose": u(3, 0.018, 0.032),
        "chin": u(4, 0.000, 0.012),
        "skin": (u(5, 0.45, 0.85), u(6, 0.32, 0.60), u(7, 0.25, 0.45)),
        "shirt": (u(8, 0.05, 0.6), u(9, 0.05, 0.6), u(10, 0.05, 0.6)),
        "glasses": k % 2 == 1,
    }


def build_head(params: dict):
    """Parts list [(material, positions, uvs, triangles)], rig doc, morph doc."""
    pos, uvs, d, tris = _ellipsoid(HEAD_CENTER, params["radii"])
    rz = params["radii"][2]
    pos[:, 2] += params["nose"] * _bump(d, 0.0, -0.05, 0.12, 0.2)
    pos[:, 1] -= params["chin"] * _bump(d, 0.0, -0.8, 0.35, 0.2)
    parts = [("skin", pos, uvs, tris)]

    npos, nuv, _, ntris = _ellipsoid((0.0, 1.47, -0.01), (0.045, 0.08, 0.045), 12, 24)
    parts.append(("neck", npos, nuv, ntris))
    tpos, tuv, _, ttris = _ellipsoid((0.0, 1.24, -0.01), (0.2, 0.14, 0.1), 16, 32)
    parts.append(("shirt", tpos, tuv, ttris))

    if params["glasses"]:
        z = HEAD_CENTER[2] + rz + 0.025
        for sx in (-1.0, 1.0):
            cx, cy, a, b = sx * 0.03, HEAD_CENTER[1] + 0.022, 0.022, 0.015
            lp = np.array([(cx - a, cy - b, z), (cx + a, cy - b, z), (cx + a, cy + b, z), (cx - a, cy + b, z)])
            luv = np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
            parts.append(("lens", lp, luv, np.array([(0, 1, 2), (0, 2, 3)])))

    # skinning: head above the neck, shoulder below, linear blend between
    weights = []
    for _, p, _, _ in parts:
        for y in p[:, 1]:
            w = float(np.clip((y - 1.44) / 0.08, 0.0, 1.0))
            if w >= 1.0:
                weights.append([["head", 1.0]])
            elif w <= 0.0:
                weights.append([["shoulder", 1.0]])
            else:
                weights.append([["head", w], ["shoulder", 1.0 - w]])
    rig = {
        "bones": [
            {"name": "shoulder", "pivot": list(SHOULDER_PIVOT)},
            {"name": "head", "pivot": list(HEAD_PIVOT), "parent": "shoulder"},
        ],
        "weights": weights,
    }

    # expression morphs act on the head ellipsoid (vertices 0..len(pos)-1)
    mouth = _bump(d, 0.0, -0.45, 0.3, 0.12)
    corners = _bump(d, 0.22, -0.45, 0.1, 0.1) + _bump(d, -0.22, -0.45, 0.1, 0.1)
    brows = _bump(d, 0.28, 0.38, 0.14, 0.08) + _bump(d, -0.28, 0.38, 0.14, 0.08)
    inner_brows = _bump(d, 0.12, 0.36, 0.08, 0.08) + _bump(d, -0.12, 0.36, 0.08, 0.08)
    jaw = _bump(d, 0.0, -0.7, 0.4, 0.25)
    s = 0.01
    fields = {
        "happy": np.c_[0 * corners, s * corners, 0.4 * s * mouth],
        "sad": np.c_[0 * corners, -s * corners - 0.4 * s * brows, 0 * corners],
        "angry": np.c_[0 * brows, -0.8 * s * inner_brows, 0.3 * s * jaw],
        "scared": np.c_[0 * brows, s * brows - 1.2 * s * jaw, 0 * jaw],
    }
    morphs = []
    for name, delta in fields.items():
        live = np.nonzero(np.abs(delta).max(axis=1) > 1e-6)[0]
        morphs.append(
            {
                "name": name,
                "indices": live.tolist(),
                "deltas": np.round(delta[live], 7).tolist(),
            }
        )
    expressions = {
        "neutral": {},
        "happy": {"happy": 1.0},
        "sad": {"sad": 1.0},
        "angry": {"angry": 1.0},
        "scared": {"scared": 1.0, "sad": 0.3},
    }
    rig.update(morphs=morphs, expressions=expressions)
    return parts, rig


def skin_texture(params: dict) -> Image.Image:
    """Skin tone with eyes, brows and lips painted in the head's uv space."""
    skin = np.array(params["skin"])
    u = (np.arange(TEX_W) + 0.5) / TEX_W
    v = 1.0 - (np.arange(TEX_H) + 0.5) / TEX_H
    uu, vv = np.meshgrid(u, v)
    theta = math.pi * (1.0 - vv)
    phi = 2.0 * math.pi * uu - math.pi
    x, y = np.sin(theta) * np.sin(phi), np.cos(theta)
    front = np.cos(phi) > 0.2

    def spot(cx, cy, sx, sy):
        return np.exp(-(((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2)) * front

    img = np.ones((TEX_H, TEX_W, 3)) * skin
    img *= (1.0 - 0.06 * np.sin(37.0 * uu) * np.sin(23.0 * vv))[..., None]  # mottling
    eyes = spot(0.33, 0.22, 0.09, 0.05) + spot(-0.33, 0.22, 0.09, 0.05)
    pupils = spot(0.33, 0.22, 0.035, 0.035) + spot(-0.33, 0.22, 0.035, 0.035)
    brows = spot(0.3, 0.38, 0.13, 0.025) + spot(-0.3, 0.38, 0.13, 0.025)
    lips = spot(0.0, -0.45, 0.2, 0.045)
    for mask, color in ((eyes, (0.95, 0.95, 0.92)), (pupils, (0.05, 0.04, 0.03)), (brows, (0.12, 0.08, 0.05)), (lips, (0.6, 0.2, 0.2))):
        m = np.clip(mask, 0.0, 1.0)[..., None]
        img = img * (1.0 - m) + np.asarray(color) * m
    return Image.fromarray(np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8), "RGB")


def write_obj(path: Path, parts, mtllib: str):
    lines = [f"mtllib {mtllib}"]
    for _, p, _, _ in parts:
        lines += [f"v {x:.7f} {y:.7f} {z:.7f}" for x, y, z in p]
    for _, _, uv, _ in parts:
        lines += [f"vt {a:.7f} {b:.7f}" for a, b in uv]
    base = 1
    for mat, p, _, tris in parts:
        lines += [f"o {mat}", f"usemtl {mat}"]
        for t in tris + base:
            lines.append("f " + " ".join(f"{i}/{i}" for i in t))
        base += len(p)
    path.write_text("\n".join(lines) + "\n")


def write_identity(directory: Path, name: str, params: dict):
    parts, rig = build_head(params)
    write_obj(directory / f"{name}.obj", parts, f"{name}.mtl")
    skin_texture(params).save(directory / f"{name}_skin.png")
    r, g, b = params["skin"]
    sr, sg, sb = params["shirt"]
    (directory / f"{name}.mtl").write_text(
        f"newmtl skin\nKd 1 1 1\nmap_Kd {name}_skin.png\nPr 0.45\n\n"
        f"newmtl neck\nKd {r:.4f} {g:.4f} {b:.4f}\nPr 0.5\n\n"
        f"newmtl shirt\nKd {sr:.4f} {sg:.4f} {sb:.4f}\nPr 0.85\n\n"
        "newmtl lens\nKd 0.6 0.7 0.8\nd 0.35\nPr 0.05\n"
    )
    (directory / f"{name}.rig.json").write_text(json.dumps(rig))


def write_backdrop(directory: Path):
    (directory / "backdrop.obj").write_text(
        "mtllib backdrop.mtl\n"
        "v -1.5 0.6 -0.6\nv 1.5 0.6 -0.6\nv 1.5 2.6 -0.6\nv -1.5 2.6 -0.6\n"
        "v -1.5 0.6 1.5\nv 1.5 0.6 1.5\n"
        "vn 0 0 1\nvn 0 1 0\n"
        "usemtl wall\nf 1//1 2//1 3//1 4//1\n"
        "usemtl floor\nf 5//2 6//2 2//2 1//2\n"
    )
    (directory / "backdrop.mtl").write_text(
        "newmtl wall\nKd 0.55 0.6 0.65\nPr 0.9\n\n"
        "newmtl floor\nKd 0.35 0.3 0.25\nPr 0.6\nPm 0.0\n"
    )


def demo_config(names, resolution=(160, 120), spp=64, count=10, seed=7) -> dict:
    return {
        "seed": seed,
        "assets": {
            "identities": [{"name": n, "mesh": f"{n}.obj", "rig": f"{n}.rig.json"} for n in names],
            "background": [{"mesh": "backdrop.obj"}],
        },
        "lights": [
            {"kind": "area", "intensity": 6.0, "center": [0.5, 2.1, 0.8], "edge_u": [0.4, 0.0, 0.0],
             "edge_v": [0.0, -0.28, 0.28], "name": "key"},
            {"kind": "point", "intensity": 0.4, "position": [-0.8, 1.7, 0.9], "name": "fill"},
            {"kind": "spot", "intensity": 3.0, "position": [0.0, 2.3, -0.4],
             "direction": [0.0, -0.8320502943378437, 0.5547001962252291],
             "cone_angle_deg": 30.0, "falloff": 0.3, "name": "rim"},
            {"kind": "sun", "intensity": 0.3, "color": [1.0, 0.95, 0.85],
             "direction": [0.0, -0.7071067811865476, -0.7071067811865476], "name": "sky"},
        ],
        "camera": {"resolution": list(resolution), "target": [0.0, 1.58, 0.0]},
        "poses": {"count": count},
        "render": {"samples_per_pixel": spp, "max_bounces": 4, "background": [0.05, 0.05, 0.06]},
        "output": {"directory": "dataset"},
    }


def write_demo(directory, identities: int = 2, seed: int = 7, **config_kw) -> Path:
    """Write assets plus ``scene.json`` into ``directory``; returns the config path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = [f"id{k:03d}" for k in range(identities)]
    for k, name in enumerate(names):
        write_identity(directory, name, identity_params(seed, k))
    write_backdrop(directory)
    cfg_path = directory / "scene.json"
    cfg_path.write_text(json.dumps(demo_config(names, seed=seed, **config_kw), indent=2) + "\n")
    return cfg_path


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m synthface.demo", description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--identities", type=int, default=2)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    print(write_demo(args.out, args.identities, args.seed))


if __name__ == "__main__":
    main()
