"""Procedural meshes for tests, demos and backgrounds."""

from __future__ import annotations

import math

import numpy as np

from .scene import Mesh


def quad(center=(0.0, 0.0, 0.0), size=(1.0, 1.0), axis: str = "z", **kw) -> Mesh:
    """Axis-aligned rectangle facing +axis, two triangles sharing the diagonal."""
    cx, cy, cz = center
    a, b = size[0] / 2.0, size[1] / 2.0
    if axis == "z":
        v = [(cx - a, cy - b, cz), (cx + a, cy - b, cz), (cx + a, cy + b, cz), (cx - a, cy + b, cz)]
        n = (0.0, 0.0, 1.0)
    elif axis == "y":
        v = [(cx - a, cy, cz + b), (cx + a, cy, cz + b), (cx + a, cy, cz - b), (cx - a, cy, cz - b)]
        n = (0.0, 1.0, 0.0)
    elif axis == "x":
        v = [(cx, cy - b, cz + a), (cx, cy - b, cz - a), (cx, cy + b, cz - a), (cx, cy + b, cz + a)]
        n = (1.0, 0.0, 0.0)
    else:
        raise ValueError(f"axis must be x, y or z, not {axis!r}")
    uv = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    return Mesh(
        name=kw.pop("name", "quad"),
        vertices=v,
        triangles=[(0, 1, 2), (0, 2, 3)],
        normals=[n] * 4,
        uvs=uv,
        **kw,
    )


def box(center=(0.0, 0.0, 0.0), size=1.0, **kw) -> Mesh:
    h = size / 2.0
    corners = np.array([(x, y, z) for x in (-h, h) for y in (-h, h) for z in (-h, h)]) + np.asarray(center)
    faces = [
        (0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
        (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3),
    ]
    tris = [t for a, b, c, d in faces for t in ((a, b, c), (a, c, d))]
    return Mesh(name=kw.pop("name", "box"), vertices=corners, triangles=tris, **kw)


def uv_sphere(center=(0.0, 0.0, 0.0), radius=1.0, n_lat=32, n_lon=64, **kw) -> Mesh:
    """Latitude/longitude sphere with its poles on the +-Z axis."""
    verts, norms, uvs = [], [], []
    for i in range(n_lat + 1):
        theta = math.pi * i / n_lat
        # exact poles and a seam that repeats column 0 bit for bit keep the mesh closed
        st = 0.0 if i in (0, n_lat) else math.sin(theta)
        ct = 1.0 if i == 0 else -1.0 if i == n_lat else math.cos(theta)
        for j in range(n_lon + 1):
            phi = 2.0 * math.pi * (j % n_lon) / n_lon
            n = (st * math.cos(phi), st * math.sin(phi), ct)
            norms.append(n)
            verts.append(tuple(c + radius * x for c, x in zip(center, n)))
            uvs.append((j / n_lon, 1.0 - i / n_lat))
    tris = []
    row = n_lon + 1
    for i in range(n_lat):
        for j in range(n_lon):
            a, b = i * row + j, i * row + j + 1
            c, d = a + row, b + row
            if i != 0:
                tris.append((a, c, b))
            if i != n_lat - 1:
                tris.append((b, c, d))
    return Mesh(
        name=kw.pop("name", "sphere"),
        vertices=verts,
        triangles=tris,
        normals=norms,
        uvs=uvs,
        **kw,
    )
