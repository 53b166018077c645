"""
Ground-truth supervision rendered by sphere tracing the analytic scene.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import torch

from render.rays import generate_camera_rays, ray_box_intersect
from scene_data.models import SKY_LABEL, CameraFrame, CameraIntrinsics, GroundTruthFrame
from scene_data.primitives import SceneSdf

logger = logging.getLogger(__name__)

TRACE_STEPS = 128
TRACE_EPS_FRACTION = 1e-5


def sphere_trace(
    scene: SceneSdf,
    origins: torch.Tensor,
    directions: torch.Tensor,
    steps: int = TRACE_STEPS,
    eps: Optional[float] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    March every ray by the current distance value until ``|f| < eps``.

    Rays leaving the scene box, or not converging within ``steps``, miss.

    Returns:
        (t of the hit, inf on a miss; hit mask)
    """
    origins = origins.to(torch.float64)
    directions = directions.to(torch.float64)
    directions = directions / directions.norm(dim=-1, keepdim=True)
    eps = TRACE_EPS_FRACTION * scene.extent if eps is None else eps
    near, far, inside = ray_box_intersect(origins, directions, scene.box_min, scene.box_max)

    t = near.clone()
    hit = torch.zeros_like(inside)
    active = inside.clone()
    for _ in range(steps):
        if not bool(active.any()):
            break
        idx = active.nonzero(as_tuple=True)[0]
        f = scene.sdf(origins[idx] + t[idx, None] * directions[idx])
        converged = f.abs() < eps
        hit[idx[converged]] = True
        t[idx] = t[idx] + torch.where(converged, torch.zeros_like(f), f)
        escaped = t[idx] > far[idx]
        active[idx[converged | escaped]] = False

    t = torch.where(hit, t, torch.full_like(t, float("inf")))
    return t, hit


def shade_lambertian(albedo: torch.Tensor, normals: torch.Tensor, light_dir, ambient: float) -> torch.Tensor:
    """albedo * max(n . l, ambient) with a fixed directional light."""
    light = torch.tensor(light_dir, dtype=normals.dtype)
    light = light / light.norm()
    return (albedo * (normals @ light).clamp_min(ambient)[:, None]).clamp(0.0, 1.0)


def render_ground_truth(scene: SceneSdf, intrinsics: CameraIntrinsics, frame: CameraFrame) -> GroundTruthFrame:
    """RGB, normals, depth, semantics and sky mask of one camera frame."""
    origins, dirs = generate_camera_rays(intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy,
                                         intrinsics.width, intrinsics.height, frame.matrix)
    origins = torch.from_numpy(origins)
    dirs = torch.from_numpy(dirs)
    t, hit = sphere_trace(scene, origins, dirs)

    num_pixels = origins.shape[0]
    spec = scene.spec
    rgb = torch.tensor(spec.sky_color, dtype=torch.float64).expand(num_pixels, 3).clone()
    normals = torch.zeros(num_pixels, 3, dtype=torch.float64)
    labels = torch.full((num_pixels,), SKY_LABEL, dtype=torch.long)
    if bool(hit.any()):
        points = origins[hit] + t[hit, None] * dirs[hit]
        n = scene.normals(points)
        normals[hit] = n
        labels[hit] = scene.label(points)
        rgb[hit] = shade_lambertian(scene.albedo(points), n, spec.light_dir, spec.ambient)

    shape = (intrinsics.height, intrinsics.width)
    sky = ~hit
    logger.debug(f"Rendered {frame.frame_id}: sky fraction {float(sky.double().mean()):.3f}")
    return GroundTruthFrame(
        rgb=rgb.reshape(*shape, 3).numpy(),
        normal=normals.reshape(*shape, 3).numpy(),
        depth=t.reshape(shape).numpy(),
        semantic=labels.reshape(shape).numpy().astype(np.uint8),
        sky=sky.reshape(shape).numpy(),
    )
