"""
Quadrature volume rendering.

Both representations end up as per-bin opacities alpha_i; compositing turns
them into transmittance T_i = prod_{j<i}(1 - alpha_j) and weights
w_i = T_i alpha_i. Sky color is blended into color only, never into depth.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import torch

logger = logging.getLogger(__name__)


@dataclass
class RenderOutputs:
    color: torch.Tensor          # [R, 3]
    depth: torch.Tensor          # [R]
    accumulation: torch.Tensor   # [R]
    weights: torch.Tensor        # [R, N]
    transmittance: torch.Tensor  # [R, N]


def alpha_from_density(density: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """alpha = 1 - exp(-sigma * delta)."""
    return 1.0 - torch.exp(-density * delta)


def alpha_from_sdf(f_start: torch.Tensor, f_end: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """
    Opacity of a section from the SDF at its two section points.

    alpha = max((Phi_s(f_start) - Phi_s(f_end)) / Phi_s(f_start), 0) with
    Phi_s the logistic sigmoid of slope s. When Phi_s(f_start) underflows the
    section is deep inside the surface and alpha is 0.
    """
    phi_start = torch.sigmoid(f_start * scale)
    phi_end = torch.sigmoid(f_end * scale)
    valid = phi_start > torch.finfo(phi_start.dtype).tiny
    denom = torch.where(valid, phi_start, torch.ones_like(phi_start))
    alpha = ((phi_start - phi_end) / denom).clamp(0.0, 1.0)
    return torch.where(valid, alpha, torch.zeros_like(alpha))


def sdf_alphas(sdf_at_edges: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """Per-bin alphas [R, N] from SDF values at bin edges [R, N+1]."""
    return alpha_from_sdf(sdf_at_edges[..., :-1], sdf_at_edges[..., 1:], scale)


def transmittance_from_alpha(alpha: torch.Tensor) -> torch.Tensor:
    """Exclusive cumulative product: T_0 = 1, T_{i+1} = T_i (1 - alpha_i)."""
    ones = torch.ones_like(alpha[..., :1])
    return torch.cumprod(torch.cat([ones, 1.0 - alpha[..., :-1]], dim=-1), dim=-1)


def weights_from_alpha(alpha: torch.Tensor) -> torch.Tensor:
    return transmittance_from_alpha(alpha) * alpha


def composite_values(weights: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
    """Sum_i w_i v_i for per-bin values [R, N, C]."""
    return (weights[..., None] * values).sum(dim=-2)


def composite(
    alpha: torch.Tensor,
    colors: torch.Tensor,
    mids: torch.Tensor,
    background: Optional[torch.Tensor] = None,
    normalize_depth: bool = True,
    eps: float = 1e-6,
) -> RenderOutputs:
    """
    Alpha-composite one batch of rays.

    Args:
        alpha: per-bin opacity [R, N], bins sorted by distance
        colors: per-bin color [R, N, 3]
        mids: bin midpoint distances [R, N]
        background: optional sky color [R, 3] filling the remaining transmittance
        normalize_depth: divide expected depth by max(acc, eps); rays that hit nothing report 0
        eps: accumulation floor for normalization

    Returns:
        RenderOutputs
    """
    num_rays = alpha.shape[0]
    if alpha.shape[-1] == 0:
        color = background if background is not None else alpha.new_zeros(num_rays, 3)
        empty = alpha.new_zeros(num_rays, 0)
        return RenderOutputs(color=color, depth=alpha.new_zeros(num_rays), accumulation=alpha.new_zeros(num_rays),
                             weights=empty, transmittance=empty)

    transmittance = transmittance_from_alpha(alpha)
    weights = transmittance * alpha
    acc = weights.sum(dim=-1)
    color = composite_values(weights, colors)
    if background is not None:
        color = color + (1.0 - acc)[..., None] * background

    depth_sum = (weights * mids).sum(dim=-1)
    if normalize_depth:
        depth = depth_sum / acc.clamp_min(eps)
    else:
        depth = depth_sum
    return RenderOutputs(color=color, depth=depth, accumulation=acc, weights=weights,
                         transmittance=transmittance)
