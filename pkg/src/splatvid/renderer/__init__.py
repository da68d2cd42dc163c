from .pipeline import Frame, render, render_frame
from .raster import (
    COV_DILATION,
    NEAR_PLANE,
    CompositeCache,
    RenderOutput,
    Splats,
    TileBins,
    composite_backward,
    composite_forward,
    project,
    project_points,
    tile_bin,
)

__all__ = [
    "COV_DILATION", "NEAR_PLANE", "CompositeCache", "Frame", "RenderOutput", "Splats", "TileBins",
    "composite_backward", "composite_forward", "project", "project_points", "render", "render_frame",
    "tile_bin",
]
