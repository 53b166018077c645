"""
Render Package - rays, samples and alpha compositing.
"""

from render.compositing import (
    RenderOutputs, alpha_from_density, alpha_from_sdf, composite, composite_values,
    sdf_alphas, transmittance_from_alpha, weights_from_alpha,
)
from render.rays import (
    RayBundle, RaySamples, camera_ray_directions, generate_camera_rays, make_ray_bundle,
    ray_box_intersect,
)

__all__ = [
    "RenderOutputs", "alpha_from_density", "alpha_from_sdf", "composite", "composite_values",
    "sdf_alphas", "transmittance_from_alpha", "weights_from_alpha",
    "RayBundle", "RaySamples", "camera_ray_directions", "generate_camera_rays", "make_ray_bundle",
    "ray_box_intersect",
]
