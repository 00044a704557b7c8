"""Monte Carlo path tracer with RGB, planar depth and object-id passes."""

from .core import (
    ALL_PASSES,
    BsdfValue,
    FrameBuffers,
    Hit,
    LightSample,
    PreparedScene,
    RenderError,
    RenderSettings,
    eval_bsdf,
    intersect,
    prepare_scene,
    render_frame,
    sample_light,
    trace_path,
)

__all__ = [
    "ALL_PASSES",
    "BsdfValue",
    "FrameBuffers",
    "Hit",
    "LightSample",
    "PreparedScene",
    "RenderError",
    "RenderSettings",
    "eval_bsdf",
    "intersect",
    "prepare_scene",
    "render_frame",
    "sample_light",
    "trace_path",
]
