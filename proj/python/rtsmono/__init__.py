"""Self-supervised monocular depth estimation: core bindings."""

from ._core import (
    DepthModel,
    compute_metrics,
    disp_to_depth,
    parameter_counts,
    read_pfm,
    read_png,
    render_random_scene,
    write_pfm,
)

__all__ = [
    "DepthModel",
    "compute_metrics",
    "disp_to_depth",
    "parameter_counts",
    "read_pfm",
    "read_png",
    "render_random_scene",
    "write_pfm",
]
