"""splatmap — incremental Gaussian-splat mapping with a differentiable CPU rasterizer.

The package builds a photorealistic map of a desk-scale scene from posed
camera frames: pixels are adaptively sampled where the image has texture,
back-projected into 3D Gaussian primitives (with a KNN redundancy filter),
and refined by first-order optimization over randomly drawn keyframe
windows.  Depth can come from a sensor (RGB-D mode) or be bootstrapped from
a sparse point cloud (monocular mode).
"""

from splatmap.geometry import (
    BehindCamera,
    ImageBuffer,
    Intrinsics,
    InvalidDepth,
    Pose,
    Z_NEAR,
    back_project,
    project,
    projection_jacobian,
)
from splatmap.gmap import GaussianMap
from splatmap.renderer import RenderOutput, render, render_reference

__all__ = [
    "BehindCamera",
    "GaussianMap",
    "ImageBuffer",
    "Intrinsics",
    "InvalidDepth",
    "Pose",
    "RenderOutput",
    "Z_NEAR",
    "back_project",
    "project",
    "projection_jacobian",
    "render",
    "render_reference",
]

__version__ = "0.1.0"
