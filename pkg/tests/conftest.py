import json

import numpy as np
import pytest

from synthface.camera import CameraModel, look_from
from synthface.scene import Light, Material, Scene, SceneObject
from synthface.shapes import quad, uv_sphere


def camera_on_axis(z=0.0, width=64, height=48, **kw) -> CameraModel:
    """Camera at (0, 0, z) looking down -Z."""
    return CameraModel(width_px=width, height_px=height, extrinsics=look_from((0.0, 0.0, z), 0.0), **kw)


def plane_scene(z=-1.0, size=10.0, material=None, lights=(), background=(0.0, 0.0, 0.0)) -> Scene:
    mat = material or Material("m")
    mesh = quad((0.0, 0.0, z), (size, size), material_id=mat.name)
    return Scene([SceneObject(mesh)], {mat.name: mat}, lights, background=background)


def sphere_scene(center=(0.0, 0.0, -0.9), radius=0.1, n_lat=64, n_lon=128, material=None, **kw) -> Scene:
    mat = material or Material("m")
    mesh = uv_sphere(center, radius, n_lat, n_lon, material_id=mat.name)
    return Scene([SceneObject(mesh)], {mat.name: mat}, **kw)


def ray_sphere_t(o, d, c, r):
    """Nearest positive root of |o + t d - c| = r (d unit), or None."""
    oc = np.asarray(o, float) - np.asarray(c, float)
    b = float(np.dot(oc, d))
    disc = b * b - (float(np.dot(oc, oc)) - r * r)
    if disc < 0:
        return None
    t = -b - np.sqrt(disc)
    return t if t > 0 else None


def occluder_scene(opacity=0.5):
    """Diffuse wall at z=-1.5 behind a semi-transparent card at z=-1, lit by
    a point light and an area light."""
    wall = Material("wall", base_color=(0.7, 0.7, 0.7), specular=0.0)
    card = Material("card", base_color=(0.8, 0.3, 0.3), opacity=opacity, roughness=0.4)
    objs = [
        SceneObject(quad((0.0, 0.0, -1.5), (4.0, 4.0), material_id="wall", object_id=1)),
        SceneObject(quad((0.0, 0.0, -1.0), (0.5, 0.5), material_id="card", object_id=2)),
    ]
    lights = [
        Light("point", 0.5, position=(0.3, 0.4, 0.0)),
        Light("area", 2.0, position=(-0.4, 0.6, -0.4), edge_u=(0.3, 0.0, 0.0), edge_v=(0.0, 0.0, 0.3)),
    ]
    return Scene(objs, {"wall": wall, "card": card}, lights)


@pytest.fixture(scope="session")
def demo_dir(tmp_path_factory):
    """Two small demo identities rendered at 64x48."""
    from synthface.demo import write_demo

    d = tmp_path_factory.mktemp("demo")
    write_demo(d, identities=2, resolution=(64, 48), spp=16, count=3)
    return d


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return path
