"""Hash-grid encoding and field heads."""

import math

import numpy as np
import pytest
import torch

from fields import FieldBundle, FieldError, HashGridEncoding, SdfField, VolumetricField, spatial_gradient
from render import alpha_from_density, weights_from_alpha


def _encoding(dtype=torch.float64):
    enc = HashGridEncoding([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], levels=3, coarsest_res=4, finest_res=16,
                           log2_table_size=12, features_per_level=2, init_scale=1.0,
                           generator=torch.Generator().manual_seed(0))
    return enc.to(dtype)


def test_resolutions_increase_and_output_length():
    enc = _encoding()
    assert enc.resolutions == [4, 8, 16]
    assert all(a < b for a, b in zip(enc.resolutions, enc.resolutions[1:]))
    out = enc(torch.rand(5, 3, dtype=torch.float64))
    assert out.shape == (5, enc.levels * enc.features_per_level)


def test_corner_point_returns_table_entry():
    enc = _encoding()
    level = 1
    corner = torch.tensor([2, 3, 5])
    x = (corner.double() / enc.resolutions[level])[None]
    features = enc.encode_level(enc.normalize(x)[0], level)
    expected = enc.table[enc.corner_indices(corner, level)]
    assert torch.equal(features[0], expected)


def test_cell_center_is_mean_of_corners():
    enc = _encoding()
    level = 2
    cell = torch.tensor([3, 7, 11])
    x = ((cell.double() + 0.5) / enc.resolutions[level])[None]
    features = enc.encode_level(x, level)[0]
    corners = torch.stack([enc.table[enc.corner_indices(cell + torch.tensor(c), level)]
                           for c in [(i & 1, (i >> 1) & 1, (i >> 2) & 1) for i in range(8)]])
    assert torch.allclose(features, corners.mean(dim=0), atol=1e-12)


def _trilinear_oracle(enc: HashGridEncoding, x: np.ndarray) -> np.ndarray:
    table = enc.table.detach().numpy()
    rows = []
    for p in x:
        feats = []
        for level, res in enumerate(enc.resolutions):
            pos = p * res
            base = np.minimum(np.floor(pos), res - 1).astype(np.int64)
            frac = pos - base
            acc = np.zeros(enc.features_per_level)
            for dx in (0, 1):
                for dy in (0, 1):
                    for dz in (0, 1):
                        w = ((frac[0] if dx else 1 - frac[0]) * (frac[1] if dy else 1 - frac[1])
                             * (frac[2] if dz else 1 - frac[2]))
                        c = base + np.array([dx, dy, dz])
                        if enc.dense[level]:
                            idx = c[0] + c[1] * (res + 1) + c[2] * (res + 1) ** 2
                        else:
                            idx = (c[0] ^ (c[1] * 2654435761) ^ (c[2] * 805459861)) & (enc.table_size - 1)
                        acc += w * table[idx + enc.offsets[level]]
            feats.append(acc)
        rows.append(np.concatenate(feats))
    return np.stack(rows)


def test_encoding_matches_trilinear_oracle():
    enc = _encoding()
    x = np.random.default_rng(1).uniform(0.0, 1.0, size=(50, 3))
    got = enc(torch.from_numpy(x)).detach().numpy()
    assert np.allclose(got, _trilinear_oracle(enc, x), atol=1e-6)


def test_out_of_box_points_are_clamped_and_flagged():
    enc = _encoding()
    x = torch.tensor([[1.5, 0.5, 0.5], [0.5, 0.5, 0.5]], dtype=torch.float64)
    features, outside = enc(x, return_outside=True)
    assert outside.tolist() == [True, False]
    assert torch.equal(features[0], enc(torch.tensor([[1.0, 0.5, 0.5]], dtype=torch.float64))[0])


def test_bundle_counts_clamped_points(small_field_config, unit_box):
    bundle = FieldBundle(small_field_config, *unit_box)
    assert bundle.take_outside_points() == 0
    x = torch.tensor([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, -2.0, 0.0]])
    bundle.sdf.signed_distance(x)
    assert bundle.sdf.encoding.outside_points == 2
    bundle.volumetric(x, torch.ones(3, 3))
    assert bundle.take_outside_points() == 4
    assert bundle.take_outside_points() == 0


def test_volumetric_initial_density_and_direction_independence(small_field_config, unit_box):
    field = VolumetricField(small_field_config, *unit_box, generator=torch.Generator().manual_seed(0))
    x = torch.rand(64, 3) * 2 - 1
    d = torch.randn(64, 3)
    out_a = field(x, d)
    out_b = field(x, -d)
    assert torch.allclose(out_a.density, torch.full_like(out_a.density, small_field_config.density_init),
                          rtol=1e-5)
    assert torch.equal(out_a.density, out_b.density)
    assert out_a.color.shape == (64, 3)
    assert out_a.semantics.shape == (64, small_field_config.num_classes)


def test_zero_direction_rejected(small_field_config, unit_box):
    field = VolumetricField(small_field_config, *unit_box)
    with pytest.raises(FieldError):
        field(torch.zeros(1, 3), torch.zeros(1, 3))


def test_fitting_opaque_voxel_separates_density(small_field_config, unit_box):
    torch.manual_seed(0)
    field = VolumetricField(small_field_config, *unit_box, generator=torch.Generator().manual_seed(1))
    optimizer = torch.optim.Adam(field.parameters(), lr=1e-2)
    gen = torch.Generator().manual_seed(2)
    for _ in range(300):
        x = torch.rand(2048, 3, generator=gen) * 2 - 1
        inside = (x.abs() < 0.25).all(dim=-1)
        target = torch.where(inside, torch.tensor(math.log(20.0)), torch.tensor(math.log(0.01)))
        loss = (torch.log(field.density(x)) - target).pow(2).mean()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    with torch.no_grad():
        sigma_in = field.density(torch.zeros(1, 3))[0]
        sigma_out = field.density(torch.tensor([[0.7, 0.7, 0.7]]))[0]
        assert sigma_in > 10.0 * sigma_out

        # rendered transmittance: a ray through the voxel is more opaque than one beside it
        t = torch.linspace(-1.0, 1.0, 65)
        mids = 0.5 * (t[1:] + t[:-1])
        widths = (t[1:] - t[:-1])[None]

        def accumulation(y):
            pts = torch.stack([mids, torch.full_like(mids, y), torch.zeros_like(mids)], dim=-1)
            return weights_from_alpha(alpha_from_density(field.density(pts)[None], widths)).sum()

        assert accumulation(0.0) > accumulation(0.8)


def test_sdf_initial_sign_pattern(small_field_config, unit_box):
    field = SdfField(small_field_config, *unit_box, generator=torch.Generator().manual_seed(0))
    f = field.signed_distance(torch.tensor([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [-1.0, 1.0, -1.0]]))
    assert f[0] < 0.0
    assert f[1] > 0.0 and f[2] > 0.0


def test_sdf_evaluation_is_deterministic(small_field_config, unit_box):
    field = SdfField(small_field_config, *unit_box, generator=torch.Generator().manual_seed(0))
    x = torch.rand(32, 3)
    assert torch.equal(field.signed_distance(x), field.signed_distance(x))


def test_bundles_with_same_seed_are_identical(small_field_config, unit_box):
    a = FieldBundle(small_field_config, *unit_box, seed=7)
    b = FieldBundle(small_field_config, *unit_box, seed=7)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert torch.equal(pa, pb)
    names = [n for n, _ in a.volumetric_parameters()] + [n for n, _ in a.sdf_parameters()]
    assert len(names) == len(set(names)) == len(list(a.parameters()))


def test_sdf_regression_to_analytic_sphere(small_field_config, unit_box):
    field = SdfField(small_field_config, *unit_box, generator=torch.Generator().manual_seed(0))
    optimizer = torch.optim.Adam(field.parameters(), lr=5e-3)
    gen = torch.Generator().manual_seed(3)
    steps = 1500
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, steps, eta_min=1e-4)
    for _ in range(steps):
        x = torch.rand(4096, 3, generator=gen) * 1.8 - 0.9
        loss = (field.signed_distance(x) - (x.norm(dim=-1) - 0.3)).abs().mean()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()

    axis = torch.linspace(-0.8, 0.8, 8)
    grid = torch.stack(torch.meshgrid(axis, axis, axis, indexing="ij"), dim=-1).reshape(-1, 3)
    with torch.no_grad():
        error = (field.signed_distance(grid) - (grid.norm(dim=-1) - 0.3)).abs().max()
    assert error < 0.01


def test_spatial_gradient_of_linear_field():
    a = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
    x = torch.randn(10, 3, dtype=torch.float64)
    grad = spatial_gradient(lambda p: p @ a, x)
    assert torch.equal(grad, a.expand_as(grad))


def test_spatial_gradient_matches_finite_differences(small_field_config, unit_box):
    field = SdfField(small_field_config, *unit_box, generator=torch.Generator().manual_seed(0)).double()
    with torch.no_grad():
        field.encoding.table.normal_(0.0, 0.05, generator=torch.Generator().manual_seed(1))
        field.trunk.layers[0].weight.normal_(0.0, 0.1, generator=torch.Generator().manual_seed(2))
    # well inside a cell on every level
    x = torch.tensor([[0.0312, -0.4063, 0.2188]], dtype=torch.float64)
    grad = spatial_gradient(field, x, create_graph=False)[0]
    h = 1e-4
    fd = torch.zeros(3, dtype=torch.float64)
    for k in range(3):
        e = torch.zeros(1, 3, dtype=torch.float64)
        e[0, k] = h
        with torch.no_grad():
            fd[k] = (field.signed_distance(x + e) - field.signed_distance(x - e))[0] / (2 * h)
    assert (grad - fd).norm() / fd.norm() < 1e-4


def test_initial_sdf_gradient_is_radial(small_field_config, unit_box):
    config = small_field_config.model_copy(update={"hidden_units": 64})
    field = SdfField(config, *unit_box, generator=torch.Generator().manual_seed(0))
    dirs = torch.nn.functional.normalize(torch.randn(64, 3, generator=torch.Generator().manual_seed(4)), dim=-1)
    x = 0.5 * dirs
    grad = torch.nn.functional.normalize(spatial_gradient(field, x, create_graph=False), dim=-1)
    angles = torch.rad2deg(torch.arccos((grad * dirs).sum(-1).clamp(-1.0, 1.0)))
    assert float(angles.mean()) < 15.0
