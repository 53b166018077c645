"""
Individual training objectives.

Gated terms select the indicator-1 rays before reducing, so values on
indicator-0 rays never enter the computation.
"""

import logging
from typing import Optional, Tuple

import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def l1_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    return (pred - gt).abs().mean()


def ssim_3x3(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean SSIM of image patches [P, H, W, 3] with a 3x3 box window, valid region only."""
    x = x.permute(0, 3, 1, 2)
    y = y.permute(0, 3, 1, 2)
    mu_x = F.avg_pool2d(x, 3, 1)
    mu_y = F.avg_pool2d(y, 3, 1)
    sigma_x = F.avg_pool2d(x * x, 3, 1) - mu_x ** 2
    sigma_y = F.avg_pool2d(y * y, 3, 1) - mu_y ** 2
    sigma_xy = F.avg_pool2d(x * y, 3, 1) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sigma_xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return (num / den).mean()


def dssim_loss(pred_patches: torch.Tensor, gt_patches: torch.Tensor) -> torch.Tensor:
    """(1 - SSIM) / 2."""
    return 0.5 * (1.0 - ssim_3x3(pred_patches, gt_patches))


def rgb_loss(
    pred: torch.Tensor,
    gt: torch.Tensor,
    pred_patches: Optional[torch.Tensor] = None,
    gt_patches: Optional[torch.Tensor] = None,
    dssim_weight: float = 0.2,
) -> torch.Tensor:
    """Mean L1 over rays plus ``dssim_weight`` times DSSIM over the patches (if any)."""
    loss = l1_loss(pred, gt)
    if pred_patches is not None and pred_patches.shape[0] > 0:
        loss = loss + dssim_weight * dssim_loss(pred_patches, gt_patches)
    return loss


def sky_loss(accumulation: torch.Tensor, sky_mask: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Binary cross-entropy of accumulated opacity against 0 on sky rays."""
    if not bool(sky_mask.any()):
        return accumulation.sum() * 0.0
    acc = accumulation[sky_mask].clamp(0.0, 1.0 - eps)
    return -torch.log1p(-acc).mean()


def distortion_loss(weights: torch.Tensor, normalized_edges: torch.Tensor) -> torch.Tensor:
    """
    sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 ds_i, averaged over rays.

    ``normalized_edges`` are bin edges mapped to [0, 1]; the pairwise term is
    evaluated in linear time from prefix sums of the sorted midpoints.
    """
    mids = 0.5 * (normalized_edges[..., 1:] + normalized_edges[..., :-1])
    widths = normalized_edges[..., 1:] - normalized_edges[..., :-1]
    w_before = torch.cumsum(weights, dim=-1) - weights
    wm_before = torch.cumsum(weights * mids, dim=-1) - weights * mids
    inter = 2.0 * (weights * (mids * w_before - wm_before)).sum(dim=-1)
    intra = (weights ** 2 * widths).sum(dim=-1) / 3.0
    return (inter + intra).mean()


def outer_measure(t_field: torch.Tensor, t_prop: torch.Tensor, w_prop: torch.Tensor) -> torch.Tensor:
    """Proposal mass over every proposal bin overlapping each field bin, [R, N]."""
    cum = torch.cat([torch.zeros_like(w_prop[..., :1]), torch.cumsum(w_prop, dim=-1)], dim=-1)
    num_prop = w_prop.shape[-1]
    t_prop = t_prop.contiguous()
    lo = (torch.searchsorted(t_prop, t_field[..., :-1].contiguous(), right=True) - 1).clamp(0, num_prop)
    hi = torch.searchsorted(t_prop, t_field[..., 1:].contiguous(), right=False).clamp(0, num_prop)
    return torch.gather(cum, -1, hi) - torch.gather(cum, -1, lo)


def proposal_loss(t_prop: torch.Tensor, w_prop: torch.Tensor, t_field: torch.Tensor,
                  w_field: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    """
    Penalize field mass not covered by the proposal histogram.

    sum_i max(w_i - outer_i, 0)^2 / (w_i + eps) per ray, averaged over rays;
    the field side is a stop-gradient target.
    """
    w_field = w_field.detach()
    outer = outer_measure(t_field.detach(), t_prop.detach(), w_prop)
    return ((w_field - outer).clamp_min(0.0) ** 2 / (w_field + eps)).sum(dim=-1).mean()


def semantic_loss(logits: torch.Tensor, labels: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean cross-entropy over (masked) rays; 0 when no ray is selected."""
    if mask is not None:
        logits = logits[mask]
        labels = labels[mask]
    if labels.numel() == 0:
        return logits.sum() * 0.0
    return F.cross_entropy(logits, labels.long())


def per_ray_normal_error(grads: torch.Tensor, normals: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """L1(n - N) + (1 - n.N) with n the normalized gradient; second output marks usable rays."""
    norm = grads.norm(dim=-1, keepdim=True)
    valid = norm[..., 0] >= 1e-8
    n = grads / norm.clamp_min(1e-8)
    error = (n - normals).abs().sum(dim=-1) + (1.0 - (n * normals).sum(dim=-1))
    return error, valid


def normal_loss_parts(
    grads: torch.Tensor,
    normals: torch.Tensor,
    gate: torch.Tensor,
    flat: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor, int]:
    """
    Gated normal loss split into (flat-class part, other part, skipped count).

    Both parts share the denominator (number of gated rays with a usable
    gradient), so their sum is the plain gated mean.
    """
    selected = gate.bool()
    g = grads[selected]
    nbar = normals[selected]
    norm_ok = g.norm(dim=-1) >= 1e-8
    skipped = int((~norm_ok).sum())
    g = g[norm_ok]
    nbar = nbar[norm_ok]
    zero = grads.sum() * 0.0
    if g.shape[0] == 0:
        return zero, zero, skipped
    error, _ = per_ray_normal_error(g, nbar)
    count = float(g.shape[0])
    if flat is None:
        return error.sum() / count, zero, skipped
    is_flat = flat[selected][norm_ok].bool()
    return error[is_flat].sum() / count, error[~is_flat].sum() / count, skipped


def normal_loss_u(grads: torch.Tensor, normals: torch.Tensor, indicator: torch.Tensor) -> torch.Tensor:
    """Mean normal error over indicator-1 rays with a usable gradient; 0 if none."""
    flat_part, other_part, _ = normal_loss_parts(grads, normals, indicator)
    return flat_part + other_part


def eikonal_loss_u(grads: torch.Tensor, indicator: torch.Tensor) -> torch.Tensor:
    """Mean of (|grad f| - 1)^2 over all samples [R, S, 3] of indicator-1 rays."""
    selected = grads[indicator.bool()]
    if selected.numel() == 0:
        return grads.sum() * 0.0
    return ((selected.norm(dim=-1) - 1.0) ** 2).mean()


def tv_depth_loss(depth_patches: torch.Tensor) -> torch.Tensor:
    """Anisotropic total variation of rendered depth over patches [P, H, W]."""
    if depth_patches.numel() == 0:
        return depth_patches.sum() * 0.0
    dx = (depth_patches[:, :, 1:] - depth_patches[:, :, :-1]).abs().mean()
    dy = (depth_patches[:, 1:, :] - depth_patches[:, :-1, :]).abs().mean()
    return dx + dy
