"""
Losses Package - photometric, geometric and sampling objectives with their weights.
"""

from losses.terms import (
    distortion_loss, dssim_loss, eikonal_loss_u, l1_loss, normal_loss_parts, normal_loss_u,
    outer_measure, per_ray_normal_error, proposal_loss, rgb_loss, semantic_loss, sky_loss,
    ssim_3x3, tv_depth_loss,
)
from losses.weights import (
    PROPOSAL_TERMS, SDF_TERMS, STAGE_INIT, STAGE_REFINE, VOLUMETRIC_TERMS, LossReport,
    LossWeights, assemble_losses,
)

__all__ = [
    "distortion_loss", "dssim_loss", "eikonal_loss_u", "l1_loss", "normal_loss_parts",
    "normal_loss_u", "outer_measure", "per_ray_normal_error", "proposal_loss", "rgb_loss",
    "semantic_loss", "sky_loss", "ssim_3x3", "tv_depth_loss",
    "PROPOSAL_TERMS", "SDF_TERMS", "STAGE_INIT", "STAGE_REFINE", "VOLUMETRIC_TERMS",
    "LossReport", "LossWeights", "assemble_losses",
]
