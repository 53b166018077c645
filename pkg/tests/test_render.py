"""Opacities, compositing and camera rays."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from render import (
    RaySamples, alpha_from_density, alpha_from_sdf, composite, generate_camera_rays, make_ray_bundle,
    sdf_alphas, transmittance_from_alpha, weights_from_alpha,
)


def test_alpha_from_density_closed_forms():
    assert alpha_from_density(torch.tensor(0.0), torch.tensor(0.3)) == 0.0
    assert alpha_from_density(torch.tensor(math.log(2.0), dtype=torch.float64),
                              torch.tensor(1.0, dtype=torch.float64)).item() == pytest.approx(0.5)
    assert alpha_from_density(torch.tensor(100.0), torch.tensor(1.0)).item() == pytest.approx(1.0)


def test_alpha_from_sdf_cases():
    s = torch.tensor(10.0, dtype=torch.float64)
    f = torch.tensor(0.3, dtype=torch.float64)
    assert alpha_from_sdf(f, f, s).item() == 0.0
    assert alpha_from_sdf(torch.tensor(5.0), torch.tensor(-5.0), torch.tensor(10.0)).item() == pytest.approx(1.0)
    alpha = alpha_from_sdf(1.0 / s, -1.0 / s, s).item()
    expected = (1 / (1 + math.exp(-1)) - 1 / (1 + math.exp(1))) / (1 / (1 + math.exp(-1)))
    assert alpha == pytest.approx(expected)
    assert alpha == pytest.approx(0.6322, abs=1e-4)


def test_alpha_from_sdf_deep_inside_is_zero():
    alpha = alpha_from_sdf(torch.tensor(-1e4), torch.tensor(-1e4 - 1.0), torch.tensor(100.0))
    assert alpha.item() == 0.0


def test_single_opaque_sample():
    color = torch.tensor([[[0.2, 0.4, 0.9]]])
    out = composite(torch.ones(1, 1), color, torch.tensor([[3.0]]))
    assert torch.allclose(out.color, color[:, 0])
    assert out.depth.item() == pytest.approx(3.0)
    assert out.accumulation.item() == pytest.approx(1.0)


def test_empty_ray_shows_sky():
    sky = torch.tensor([[0.6, 0.7, 0.9]])
    out = composite(torch.zeros(1, 8), torch.rand(1, 8, 3), torch.linspace(0.5, 7.5, 8)[None], background=sky)
    assert torch.allclose(out.color, sky)
    assert out.accumulation.item() == 0.0
    assert out.depth.item() == 0.0


def test_zero_bin_ray():
    sky = torch.tensor([[0.1, 0.2, 0.3]])
    out = composite(torch.zeros(1, 0), torch.zeros(1, 0, 3), torch.zeros(1, 0), sky)
    assert torch.equal(out.color, sky)
    assert out.depth.item() == 0.0
    assert out.accumulation.item() == 0.0


def test_wall_depth_within_one_bin():
    edges = torch.linspace(0.0, 4.0, 65, dtype=torch.float64)[None]
    samples = RaySamples(edges)
    density = torch.where(samples.mids > 2.0, torch.tensor(1e4, dtype=torch.float64),
                          torch.tensor(0.0, dtype=torch.float64))
    alpha = alpha_from_density(density, samples.widths)
    out = composite(alpha, torch.ones(1, 64, 3, dtype=torch.float64), samples.mids)
    bin_width = 4.0 / 64
    assert 2.0 <= out.depth.item() <= 2.0 + bin_width


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40))
def test_weights_are_bounded_and_recurrence_holds(alphas):
    alpha = torch.tensor([alphas], dtype=torch.float64)
    weights = weights_from_alpha(alpha)
    trans = transmittance_from_alpha(alpha)
    assert bool((weights >= 0).all())
    assert weights.sum().item() <= 1.0 + 1e-6
    assert torch.allclose(trans[..., 1:], trans[..., :-1] * (1.0 - alpha[..., :-1]), rtol=0.0, atol=1e-15)


def test_splitting_empty_bin_is_invariant():
    edges = torch.tensor([[0.0, 1.0, 2.0, 3.0]], dtype=torch.float64)
    density = torch.tensor([[0.0, 2.0, 1.0]], dtype=torch.float64)
    colors = torch.tensor([[[0.0, 0.0, 0.0], [1.0, 0.5, 0.0], [0.0, 0.5, 1.0]]], dtype=torch.float64)
    s = RaySamples(edges)
    a = composite(alpha_from_density(density, s.widths), colors, s.mids)

    split_edges = torch.tensor([[0.0, 0.4, 1.0, 2.0, 3.0]], dtype=torch.float64)
    split_density = torch.tensor([[0.0, 0.0, 2.0, 1.0]], dtype=torch.float64)
    split_colors = torch.cat([colors[:, :1], colors], dim=1)
    s2 = RaySamples(split_edges)
    b = composite(alpha_from_density(split_density, s2.widths), split_colors, s2.mids)
    assert torch.allclose(a.color, b.color, atol=1e-12)
    assert torch.allclose(a.depth, b.depth, atol=1e-12)
    assert torch.allclose(a.accumulation, b.accumulation, atol=1e-12)


def test_sdf_depth_bias_shrinks_with_scale():
    surface = 1.0
    errors = []
    for s in (16.0, 64.0, 256.0):
        width = 0.25 / s
        edges = torch.arange(0.0, 1.05 + width / 2, width, dtype=torch.float64)[None]
        f = surface - edges
        samples = RaySamples(edges)
        alpha = sdf_alphas(f, torch.tensor(s, dtype=torch.float64))
        out = composite(alpha, torch.ones(1, samples.num_bins, 3, dtype=torch.float64), samples.mids)
        errors.append(abs(out.depth.item() - surface))
    assert errors[0] > errors[1] > errors[2]


def test_unnormalized_depth_flag():
    alpha = torch.tensor([[0.5]])
    out = composite(alpha, torch.ones(1, 1, 3), torch.tensor([[2.0]]), normalize_depth=False)
    assert out.depth.item() == pytest.approx(1.0)
    out = composite(alpha, torch.ones(1, 1, 3), torch.tensor([[2.0]]))
    assert out.depth.item() == pytest.approx(2.0)


def test_faint_ray_depth_uses_accumulation_floor():
    alpha = torch.tensor([[1e-8, 0.0]], dtype=torch.float64)
    mids = torch.tensor([[2.0, 3.0]], dtype=torch.float64)
    out = composite(alpha, torch.ones(1, 2, 3, dtype=torch.float64), mids, eps=1e-6)
    assert out.accumulation.item() == pytest.approx(1e-8)
    assert out.depth.item() == pytest.approx(1e-8 * 2.0 / 1e-6)
    assert out.depth.item() < 2.0


def test_camera_rays_and_box_clipping():
    c2w = np.eye(4)
    origins, dirs = generate_camera_rays(10.0, 10.0, 2.0, 2.0, 4, 4, c2w)
    assert origins.shape == dirs.shape == (16, 3)
    assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0)
    assert (dirs[:, 2] > 0).all()

    rays = make_ray_bundle(torch.tensor([[0.0, 0.0, -5.0], [0.0, 0.0, 0.0]]),
                           torch.tensor([[0.0, 0.0, 2.0], [1.0, 0.0, 0.0]]),
                           torch.tensor([-1.0, -1.0, -1.0]), torch.tensor([1.0, 1.0, 1.0]))
    assert rays.near.tolist() == pytest.approx([4.0, 0.0])
    assert rays.far.tolist() == pytest.approx([6.0, 1.0])
    assert torch.allclose(rays.directions.norm(dim=-1), torch.ones(2))
