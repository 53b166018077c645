"""
Guided Ray Sampling.

Bounds per ray are tightened around the mesh depth when the mesh is trusted
and around the volumetric depth otherwise. Samples inside the bounds are
drawn by inverse-CDF sampling of a coarser stage's weight histogram. All
bounds and sample positions are control inputs and carry no gradient.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Optional

import torch

logger = logging.getLogger(__name__)


class Branch(enum.IntEnum):
    CERTAIN_MESH = 0
    UNCERTAIN_VOL = 1
    FALLBACK_FULL = 2


@dataclass
class SamplingBounds:
    near: torch.Tensor     # [R]
    far: torch.Tensor      # [R]
    branch: torch.Tensor   # [R] long, values of Branch
    delta: float

    def fraction(self, branch: Branch) -> float:
        if self.branch.numel() == 0:
            return 0.0
        return float((self.branch == int(branch)).float().mean())


def full_bounds(rays, delta: float = 0.0) -> SamplingBounds:
    """The ray's whole box interval."""
    return SamplingBounds(
        near=rays.near.detach().clone(),
        far=rays.far.detach().clone(),
        branch=torch.full_like(rays.near, int(Branch.FALLBACK_FULL), dtype=torch.long),
        delta=delta,
    )


def _finalize(rays, near: torch.Tensor, far: torch.Tensor, branch: torch.Tensor, delta: float,
              min_width: float = 1e-6) -> SamplingBounds:
    """Clamp to the box interval; collapsed intervals fall back to the full bounds."""
    near = torch.maximum(near, rays.near).clamp_min(0.0)
    far = torch.minimum(far, rays.far)
    collapsed = ~(far > near + min_width) | ~torch.isfinite(near) | ~torch.isfinite(far)
    near = torch.where(collapsed, rays.near, near)
    far = torch.where(collapsed, rays.far, far)
    branch = torch.where(collapsed, torch.full_like(branch, int(Branch.FALLBACK_FULL)), branch)
    return SamplingBounds(near=near.detach(), far=far.detach(), branch=branch, delta=delta)


def volumetric_grs_bounds(rays, mu_c: torch.Tensor, mesh_depth: torch.Tensor, delta: float,
                          tau_c: float) -> SamplingBounds:
    """[near, D_mesh + delta] when mu_c < tau_c and the mesh was hit; the full box interval otherwise."""
    certain = (mu_c < tau_c) & torch.isfinite(mesh_depth)
    far = torch.where(certain, mesh_depth + delta, rays.far)
    branch = torch.where(
        certain,
        torch.full_like(mu_c, int(Branch.CERTAIN_MESH), dtype=torch.long),
        torch.full_like(mu_c, int(Branch.FALLBACK_FULL), dtype=torch.long),
    )
    return _finalize(rays, rays.near, far, branch, delta)


def sdf_grs_bounds(rays, mu_d: torch.Tensor, mesh_depth: torch.Tensor, volume_depth: torch.Tensor,
                   delta: float, tau_d: float) -> SamplingBounds:
    """A 2*delta shell around D_mesh when mu_d < tau_d, around D_vol otherwise."""
    certain = mu_d < tau_d
    center = torch.where(certain, mesh_depth, volume_depth.detach())
    branch = torch.where(
        certain,
        torch.full_like(mu_d, int(Branch.CERTAIN_MESH), dtype=torch.long),
        torch.full_like(mu_d, int(Branch.UNCERTAIN_VOL), dtype=torch.long),
    )
    return _finalize(rays, (center - delta).clamp_min(0.0), center + delta, branch, delta)


def uniform_edges(near: torch.Tensor, far: torch.Tensor, num_bins: int) -> torch.Tensor:
    """Evenly spaced bin edges [R, num_bins + 1] over [near, far]."""
    steps = torch.linspace(0.0, 1.0, num_bins + 1, dtype=near.dtype, device=near.device)
    return near[:, None] + (far - near)[:, None] * steps


def pdf_sample(
    edges: torch.Tensor,
    weights: torch.Tensor,
    num_samples: int,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Inverse-CDF sampling of a piecewise-constant histogram.

    Args:
        edges: bin edges [R, N+1], restricted to the sampling bounds
        weights: nonnegative bin weights [R, N]; an all-zero row means uniform
        num_samples: samples per ray
        generator: stratified jitter source; None places samples at stratum centres

    Returns:
        Sorted sample distances [R, num_samples], detached
    """
    edges = edges.detach()
    weights = weights.detach().clamp_min(0.0)
    widths = (edges[..., 1:] - edges[..., :-1]).clamp_min(0.0)
    total = weights.sum(dim=-1, keepdim=True)
    weights = torch.where(total > 0.0, weights, widths)
    total = weights.sum(dim=-1, keepdim=True)
    # a row of zero-width bins degenerates to a uniform histogram
    weights = torch.where(total > 0.0, weights, torch.ones_like(weights))
    total = weights.sum(dim=-1, keepdim=True)

    cdf = torch.cumsum(weights / total, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)
    cdf[..., -1] = 1.0

    num_rays = edges.shape[0]
    strata = torch.arange(num_samples, dtype=edges.dtype, device=edges.device)
    if generator is None:
        jitter = torch.full((num_rays, num_samples), 0.5, dtype=edges.dtype, device=edges.device)
    else:
        jitter = torch.rand(num_rays, num_samples, generator=generator, dtype=edges.dtype)
    u = ((strata + jitter) / num_samples).clamp(0.0, 1.0 - 1e-12)

    num_bins = weights.shape[-1]
    idx = (torch.searchsorted(cdf.contiguous(), u.contiguous(), right=True) - 1).clamp(0, num_bins - 1)
    c0 = torch.gather(cdf, -1, idx)
    c1 = torch.gather(cdf, -1, idx + 1)
    e0 = torch.gather(edges, -1, idx)
    e1 = torch.gather(edges, -1, idx + 1)
    span = c1 - c0
    frac = ((u - c0) / torch.where(span > 0.0, span, torch.ones_like(span))).clamp(0.0, 1.0)
    samples = e0 + frac * (e1 - e0)
    # guard against rounding ties
    return torch.cummax(samples, dim=-1).values


def edges_from_samples(samples: torch.Tensor, near: torch.Tensor, far: torch.Tensor) -> torch.Tensor:
    """Bins around sorted samples: interior edges at midpoints, outer edges at the bounds."""
    mids = 0.5 * (samples[..., 1:] + samples[..., :-1])
    return torch.cat([near[:, None], mids, far[:, None]], dim=-1).detach()


def merge_samples(*samples: torch.Tensor) -> torch.Tensor:
    return torch.sort(torch.cat(samples, dim=-1), dim=-1).values


class ShellSchedule:
    """
    Per-epoch shell half-width: delta_0 = init_fraction * extent, then
    delta' = max(decay * delta, min_cells * extent / mesh_resolution).
    """

    def __init__(self, extent: float, mesh_resolution: int, init_fraction: float = 0.05,
                 decay: float = 0.8, min_cells: float = 4.0):
        self.extent = extent
        self.decay = decay
        self.initial = init_fraction * extent
        self.minimum = min_cells * extent / mesh_resolution

    def update(self, delta: float) -> float:
        return max(delta * self.decay, self.minimum)

    def at_epoch(self, epoch: int) -> float:
        """Closed form of ``epoch`` successive updates from the initial value."""
        return max(self.initial * self.decay ** epoch, self.minimum) if epoch > 0 else self.initial


def shell_update(delta: float, schedule: ShellSchedule) -> float:
    return schedule.update(delta)
