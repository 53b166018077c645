"""
Full-frame rendering for inspection, PSNR tracking and the render command.
"""

import logging
from typing import Dict, Optional

import numpy as np
import torch

from guidance.sampling import full_bounds
from guidance.uncertainty import geometric_uncertainty, photometric_uncertainty
from losses.weights import STAGE_REFINE
from mesh.models import SceneMesh
from mesh.queries import ray_mesh_depth
from scene_data.dataset import TrainingDataset

logger = logging.getLogger(__name__)

FIELD_VOLUMETRIC = "volumetric"
FIELD_SDF = "sdf"
UNCERTAINTY_CLAMP = 0.3


def render_view(bundle, renderer, dataset: TrainingDataset, frame_index: int, chunk: int = 4096,
                field: str = FIELD_VOLUMETRIC, mesh: Optional[SceneMesh] = None) -> Dict[str, np.ndarray]:
    """
    Render one camera frame in ray chunks without gradients.

    Args:
        bundle: FieldBundle holding the fields
        renderer: DualRenderer over ``bundle``
        dataset: source of camera rays and ground truth
        frame_index: frame to render
        chunk: rays per forward pass
        field: "volumetric" or "sdf"
        mesh: when given, per-pixel mu_d and mu_c maps are added

    Returns:
        dict with "color" [H, W, 3], "depth" [H, W], "accumulation" [H, W] and,
        with a mesh, "mu_d" and "mu_c" [H, W] clamped to UNCERTAINTY_CLAMP
    """
    if field not in (FIELD_VOLUMETRIC, FIELD_SDF):
        raise ValueError(f"unknown field '{field}'")
    pixel_ids = dataset.frame_pixel_ids(frame_index)
    colors, depths, accs, mu_ds, mu_cs = [], [], [], [], []
    was_training = bundle.training
    bundle.eval()
    try:
        with torch.no_grad():
            for start in range(0, pixel_ids.shape[0], chunk):
                ids = pixel_ids[start:start + chunk]
                rays = dataset.rays(ids)
                bounds = full_bounds(rays)
                if field == FIELD_VOLUMETRIC:
                    out = renderer.render_volumetric(rays, bounds).outputs
                else:
                    out = renderer.render_sdf(rays, bounds, STAGE_REFINE, with_gradients=False).outputs
                colors.append(out.color)
                depths.append(out.depth)
                accs.append(out.accumulation)
                if mesh is not None:
                    mu_d, mu_c = _uncertainty_chunk(bundle, rays, out.depth, dataset.targets(ids)["rgb"], mesh)
                    mu_ds.append(mu_d)
                    mu_cs.append(mu_c)
    finally:
        bundle.train(was_training)

    shape = (dataset.height, dataset.width)
    result = {
        "color": torch.cat(colors).clamp(0.0, 1.0).reshape(*shape, 3).numpy(),
        "depth": torch.cat(depths).reshape(shape).numpy(),
        "accumulation": torch.cat(accs).reshape(shape).numpy(),
    }
    if mesh is not None:
        result["mu_d"] = torch.cat(mu_ds).reshape(shape).numpy()
        result["mu_c"] = torch.cat(mu_cs).reshape(shape).numpy()
    logger.debug(f"Rendered frame {frame_index} through the {field} field")
    return result


def _uncertainty_chunk(bundle, rays, volume_depth, gt_rgb, mesh: SceneMesh):
    if mesh.is_empty:
        miss = torch.full_like(volume_depth, UNCERTAINTY_CLAMP)
        return miss, miss.clone()
    depth = ray_mesh_depth(mesh, rays.origins.double().numpy(), rays.directions.double().numpy())
    mesh_depth = torch.from_numpy(depth).to(volume_depth.dtype)
    mu_d = geometric_uncertainty(mesh_depth, volume_depth)
    mu_c = photometric_uncertainty(bundle.sdf, rays.origins, rays.directions, mesh_depth, gt_rgb)
    # mesh misses are infinite; the clamp maps them to the top of the ramp
    return (torch.nan_to_num(mu_d, posinf=UNCERTAINTY_CLAMP).clamp(0.0, UNCERTAINTY_CLAMP),
            mu_c.clamp(0.0, UNCERTAINTY_CLAMP))


def to_uint8(image: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Map [0, scale] to 8-bit; single-channel maps stay 2-D."""
    return (np.clip(np.asarray(image, np.float64) / scale, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
