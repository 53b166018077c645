"""
Per-step rendering of both fields.

The volumetric pass walks the proposal hierarchy inside its sampling
bounds and composites the radiance field; the SDF pass places sections
inside its own bounds and composites with NeuS opacities. Sample
placement never carries gradient.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import torch

from config import RenderConfig, SamplingConfig
from fields.networks import FieldBundle, SdfField, spatial_gradient
from guidance.sampling import (
    SamplingBounds, edges_from_samples, merge_samples, pdf_sample, uniform_edges,
)
from losses.weights import STAGE_REFINE
from render.compositing import (
    RenderOutputs, alpha_from_density, composite, composite_values, sdf_alphas, weights_from_alpha,
)
from render.rays import RayBundle, RaySamples

logger = logging.getLogger(__name__)


@dataclass
class VolumetricPass:
    outputs: RenderOutputs
    samples: RaySamples
    semantics: torch.Tensor              # composited logits [R, C]
    proposal_edges: List[torch.Tensor]   # per level [R, N_k + 1]
    proposal_weights: List[torch.Tensor]  # per level [R, N_k]


@dataclass
class SdfPass:
    outputs: RenderOutputs
    samples: RaySamples
    sdf_at_edges: torch.Tensor
    edge_gradients: Optional[torch.Tensor] = None   # [R, N + 1, 3]


def max_weight_points(rays: RayBundle, samples: RaySamples, weights: torch.Tensor) -> torch.Tensor:
    """The bin midpoint carrying the largest rendering weight on every ray, [R, 3]."""
    if weights.shape[-1] == 0:
        return rays.points(rays.far)
    idx = weights.detach().argmax(dim=-1, keepdim=True)
    t = torch.gather(samples.mids, -1, idx)[:, 0]
    return rays.points(t.detach())


def _sdf_with_gradient(field: SdfField, x: torch.Tensor):
    with torch.enable_grad():
        x = x.detach().requires_grad_(True)
        f = field.signed_distance(x)
        (grad,) = torch.autograd.grad(f, x, grad_outputs=torch.ones_like(f), create_graph=True)
    return f, grad


class DualRenderer:
    """Renders ray batches through the volumetric and SDF fields of one bundle."""

    def __init__(self, bundle: FieldBundle, sampling: SamplingConfig, render: RenderConfig):
        self.bundle = bundle
        self.sampling = sampling
        self.render_config = render

    def _composite(self, alpha, colors, mids, background):
        return composite(alpha, colors, mids, background,
                         normalize_depth=self.render_config.normalize_depth, eps=self.render_config.depth_eps)

    def render_volumetric(self, rays: RayBundle, bounds: SamplingBounds,
                          generator: Optional[torch.Generator] = None) -> VolumetricPass:
        """Proposal levels 0 and 1 resample by PDF, then the radiance field renders the final bins."""
        near, far = bounds.near, bounds.far
        edges = uniform_edges(near, far, self.sampling.proposal0_samples)
        next_counts = (self.sampling.proposal1_samples, self.sampling.volumetric_samples)
        proposal_edges, proposal_weights = [], []
        for proposal, count in zip(self.bundle.proposals, next_counts):
            level = RaySamples(edges)
            density = proposal.density(rays.points(level.mids))
            weights = weights_from_alpha(alpha_from_density(density, level.widths))
            proposal_edges.append(edges)
            proposal_weights.append(weights)
            edges = edges_from_samples(pdf_sample(edges, weights, count, generator), near, far)

        samples = RaySamples(edges)
        x = rays.points(samples.mids)
        dirs = rays.directions[:, None, :].expand_as(x)
        out = self.bundle.volumetric(x, dirs)
        alpha = alpha_from_density(out.density, samples.widths)
        background = self.bundle.sky(rays.directions)
        outputs = self._composite(alpha, out.color, samples.mids, background)
        semantics = composite_values(outputs.weights, out.semantics)
        return VolumetricPass(outputs=outputs, samples=samples, semantics=semantics,
                              proposal_edges=proposal_edges, proposal_weights=proposal_weights)

    def sdf_sample_edges(self, rays: RayBundle, bounds: SamplingBounds, stage: str,
                         generator: Optional[torch.Generator] = None,
                         coarse: Optional[int] = None, fine: Optional[int] = None) -> torch.Tensor:
        """
        Bin edges of the SDF pass.

        Initial stage: stratified uniform samples inside the bounds.
        Refinement stage: uniform coarse sections, NeuS weights from the
        current SDF, PDF-drawn fine samples, rendered over the merged set.
        """
        near, far = bounds.near, bounds.far
        span = torch.stack([near, far], dim=-1)
        flat = torch.ones(near.shape[0], 1, dtype=near.dtype)
        if stage != STAGE_REFINE:
            samples = pdf_sample(span, flat, self.sampling.sdf_samples, generator)
            return edges_from_samples(samples, near, far)

        coarse = coarse or self.sampling.refine_sdf_coarse_samples
        fine = fine or self.sampling.refine_sdf_fine_samples
        coarse_t = uniform_edges(near, far, coarse - 1)
        field = self.bundle.sdf
        with torch.no_grad():
            f = field.signed_distance(rays.points(coarse_t))
            weights = weights_from_alpha(sdf_alphas(f, field.scale))
        fine_t = pdf_sample(coarse_t, weights, fine, generator)
        return edges_from_samples(merge_samples(coarse_t, fine_t), near, far)

    def render_sdf(self, rays: RayBundle, bounds: SamplingBounds, stage: str,
                   generator: Optional[torch.Generator] = None, with_gradients: bool = True,
                   coarse: Optional[int] = None, fine: Optional[int] = None) -> SdfPass:
        """SDF at section points (bin edges), color at bin midpoints, sky behind both."""
        edges = self.sdf_sample_edges(rays, bounds, stage, generator, coarse, fine)
        samples = RaySamples(edges)
        field = self.bundle.sdf
        x_edges = rays.points(edges)
        if with_gradients:
            f, grad = _sdf_with_gradient(field, x_edges)
        else:
            f, grad = field.signed_distance(x_edges), None
        alpha = sdf_alphas(f, field.scale)
        x_mid = rays.points(samples.mids)
        color = field.color(x_mid, rays.directions[:, None, :].expand_as(x_mid))
        # sky head is trained by the volumetric objective only
        background = self.bundle.sky(rays.directions).detach()
        outputs = self._composite(alpha, color, samples.mids, background)
        return SdfPass(outputs=outputs, samples=samples, sdf_at_edges=f, edge_gradients=grad)

    def volumetric_normal_gradients(self, rays: RayBundle, vol: VolumetricPass) -> torch.Tensor:
        """-grad(sigma) at each ray's max-weight sample; normalized by the loss."""
        x = max_weight_points(rays, vol.samples, vol.outputs.weights)
        return -spatial_gradient(self.bundle.volumetric.density, x)

    def sdf_normal_gradients(self, rays: RayBundle, sdf: SdfPass) -> torch.Tensor:
        x = max_weight_points(rays, sdf.samples, sdf.outputs.weights)
        return spatial_gradient(self.bundle.sdf, x)
