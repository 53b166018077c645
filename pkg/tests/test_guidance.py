"""Uncertainty estimates, adaptive thresholds and guided ray sampling."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy import stats

from guidance import (
    Branch, ShellSchedule, ThresholdPolicy, UncertaintyRecord, UncertaintyTracker, certainty_indicator,
    geometric_uncertainty, pdf_sample, photometric_from_colors, photometric_uncertainty, sdf_grs_bounds,
    shell_update, update_threshold, update_threshold_from_hits, volumetric_grs_bounds,
)
from render import RayBundle

POLICY = ThresholdPolicy()


def _rays(n=1, near=0.0, far=20.0):
    return RayBundle(
        origins=torch.zeros(n, 3, dtype=torch.float64),
        directions=torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64).expand(n, 3),
        pixel_ids=torch.full((n,), -1, dtype=torch.long),
        near=torch.full((n,), near, dtype=torch.float64),
        far=torch.full((n,), far, dtype=torch.float64),
    )


def _t(*values):
    return torch.tensor(values, dtype=torch.float64)


# ============================================================================
# Uncertainty
# ============================================================================

def test_geometric_uncertainty_examples():
    mu = geometric_uncertainty(_t(7.0, 5.0, math.inf, 3.0), _t(7.0, 10.0, 4.0, 0.0))
    assert mu[0].item() == 0.0
    assert mu[1].item() == pytest.approx(0.5)
    assert math.isinf(mu[2].item())
    assert math.isinf(mu[3].item())


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 50.0), st.floats(0.1, 50.0), st.floats(0.01, 100.0))
def test_geometric_uncertainty_is_scale_invariant(mesh_depth, volume_depth, scale):
    a = geometric_uncertainty(_t(mesh_depth), _t(volume_depth))
    b = geometric_uncertainty(_t(mesh_depth * scale), _t(volume_depth * scale))
    assert a.item() >= 0.0
    assert b.item() == pytest.approx(a.item(), rel=1e-9, abs=1e-12)


def test_photometric_from_colors_examples():
    hit = torch.tensor([True, True, True, False])
    mesh_color = _t([0.2, 0.4, 0.6], [1.0, 1.0, 1.0], [0.5, 0.5, 0.5], [0.0, 0.0, 0.0])
    gt = _t([0.2, 0.4, 0.6], [0.0, 0.0, 0.0], [0.44, 0.5, 0.56], [0.0, 0.0, 0.0])
    mu = photometric_from_colors(mesh_color, gt, hit)
    assert mu[0].item() == 0.0
    assert mu[1].item() == 1.0
    assert mu[2].item() == pytest.approx(0.04)
    assert mu[2].item() > 0.02
    assert mu[3].item() == 1.0


class _ConstantColor:
    def __init__(self, rgb):
        self.rgb = torch.tensor(rgb, dtype=torch.float64)
        self.queries = []

    def color(self, x, directions):
        self.queries.append(x.clone())
        return self.rgb.expand(x.shape[0], 3)


def test_photometric_uncertainty_queries_mesh_hit_point():
    field = _ConstantColor([0.5, 0.5, 0.5])
    origins = torch.zeros(2, 3, dtype=torch.float64)
    directions = _t([0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    mu = photometric_uncertainty(field, origins, directions, _t(4.0, math.inf),
                                 _t([0.44, 0.5, 0.56], [0.5, 0.5, 0.5]))
    assert mu.tolist() == pytest.approx([0.04, 1.0])
    assert torch.allclose(field.queries[0], _t([0.0, 0.0, 4.0]))


def test_threshold_branches():
    assert update_threshold(0.1, _t(0.0, 0.01, 0.05), POLICY) == pytest.approx(0.1 * 0.95)
    assert update_threshold(0.1, _t(0.5, 1.0, math.inf), POLICY) == pytest.approx(0.1 * 1.05)
    # u = 2, c = 3: rho = 2/3 lies inside the band
    assert update_threshold(0.1, _t(0.0, 0.01, 0.05, 0.5, 0.9), POLICY) == 0.1
    with pytest.raises(ValueError):
        update_threshold(0.1, torch.zeros(0), POLICY)


def test_threshold_with_mesh_misses():
    batch = _t(0.01, 0.02, 0.03, math.inf, math.inf, math.inf, math.inf)
    # counting misses as uncertain: u = 4, c = 3, rho = 4/3 grows tau
    assert update_threshold(0.1, batch, POLICY) == pytest.approx(0.1 * 1.05)
    # hits only: u = 0 shrinks tau
    assert update_threshold_from_hits(0.1, batch, POLICY) == pytest.approx(0.1 * 0.95)
    assert update_threshold_from_hits(0.1, _t(math.inf, math.inf), POLICY) == 0.1
    mixed = _t(0.5, 0.9, 0.0, math.inf)
    assert update_threshold_from_hits(0.1, mixed, POLICY) == update_threshold(0.1, mixed[:3], POLICY)


def _scripted_threshold(tau, batch):
    uncertain = sum(1 for m in batch if m > tau)
    certain = len(batch) - uncertain
    rho = math.inf if certain == 0 else uncertain / certain
    if rho > 1.0:
        return tau * 1.05
    if rho < 0.5:
        return tau * 0.95
    return tau


def test_threshold_replay_matches_script_and_settles():
    gen = torch.Generator().manual_seed(11)
    tau = expected = 0.1
    trajectory = [tau]
    for _ in range(200):
        batch = torch.rand(4096, generator=gen, dtype=torch.float64)
        tau = update_threshold(tau, batch, POLICY)
        expected = _scripted_threshold(expected, batch.tolist())
        assert tau == expected
        trajectory.append(tau)

    tail = trajectory[-41:]
    moves = [int(np.sign(b - a)) for a, b in zip(tail, tail[1:])]
    assert not any(m != 0 and m == n for m, n in zip(moves, moves[1:]))
    assert 0.45 < tau < 0.7


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 2.0), min_size=1, max_size=30), st.floats(0.0, 1.0), st.floats(0.01, 1.0))
def test_threshold_is_monotone_in_batch(values, bump, tau):
    a = torch.tensor(values, dtype=torch.float64)
    b = a + bump
    assert update_threshold(tau, b, POLICY) >= update_threshold(tau, a, POLICY)


def test_certainty_indicator_boundary_and_flip():
    mu_c = _t(0.0, 1.0, 0.02)
    assert certainty_indicator(mu_c, 0.02).tolist() == [True, False, True]
    assert certainty_indicator(mu_c, 0.02, flip=True).tolist() == [False, True, False]


def test_indicator_fraction_tracks_tau_c():
    mu_c = torch.rand(500, generator=torch.Generator().manual_seed(5), dtype=torch.float64)
    fractions = [float(certainty_indicator(mu_c, tau).double().mean()) for tau in (0.01, 0.1, 0.3, 0.8)]
    assert fractions == sorted(fractions)
    flipped = [float(certainty_indicator(mu_c, tau, flip=True).double().mean()) for tau in (0.01, 0.1, 0.3, 0.8)]
    assert flipped == sorted(flipped, reverse=True)


def test_invalid_policy_rejected():
    with pytest.raises(ValueError):
        ThresholdPolicy(gamma_up=0.9)
    with pytest.raises(ValueError):
        ThresholdPolicy(rho_low=2.0, rho_high=1.0)


def test_tracker_writes_quantile_rows(tmp_path):
    tracker = UncertaintyTracker(tmp_path / "u.csv", quantiles=(0.5,))
    tracker.observe(UncertaintyRecord(mu_d=_t(0.1, 0.3, math.inf, 0.2), mu_c=_t(0.0, 0.5, 1.0, 0.5),
                                      tau_d=0.1, tau_c=0.02, indicator=torch.ones(4, dtype=torch.bool)))
    summary = tracker.flush(0, 0.1)
    assert summary["miss_fraction"] == pytest.approx(0.25)
    assert summary["mu_d_q0.5"] == pytest.approx(0.2)
    assert summary["mu_c_q0.5"] == pytest.approx(0.5)
    lines = (tmp_path / "u.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,tau_d,miss_fraction,mu_d_q0.5,mu_c_q0.5"
    assert len(lines) == 2
    assert tracker.flush(1, 0.1) == {}


def test_reopened_tracker_appends_to_existing_rows(tmp_path):
    path = tmp_path / "u.csv"
    record = UncertaintyRecord(mu_d=_t(0.1, 0.2), mu_c=_t(0.0, 0.5), tau_d=0.1, tau_c=0.02,
                               indicator=torch.ones(2, dtype=torch.bool))
    first = UncertaintyTracker(path, quantiles=(0.5,))
    first.observe(record)
    first.flush(0, 0.1)

    second = UncertaintyTracker(path, quantiles=(0.5,))
    assert len(path.read_text().strip().splitlines()) == 2
    second.observe(record)
    second.flush(1, 0.105)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("epoch,")
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1"]


# ============================================================================
# Guided ray sampling
# ============================================================================

def test_volumetric_bounds_examples():
    rays = _rays(2)
    bounds = volumetric_grs_bounds(rays, _t(0.001, 0.5), _t(10.0, 10.0), 0.5, 0.02)
    assert bounds.near.tolist() == [0.0, 0.0]
    assert bounds.far.tolist() == pytest.approx([10.5, 20.0])
    assert bounds.branch.tolist() == [Branch.CERTAIN_MESH, Branch.FALLBACK_FULL]
    assert bounds.fraction(Branch.CERTAIN_MESH) == 0.5


def test_volumetric_bounds_on_mesh_miss_use_full_interval():
    bounds = volumetric_grs_bounds(_rays(), _t(0.0), _t(math.inf), 0.5, 0.02)
    assert bounds.far.item() == 20.0
    assert bounds.branch.item() == Branch.FALLBACK_FULL


def test_sdf_bounds_examples():
    rays = _rays(3)
    bounds = sdf_grs_bounds(rays, _t(0.0, math.inf, 0.0), _t(8.0, 9.0, 0.2), _t(8.0, 3.0, 0.3), 0.5, 0.1)
    assert bounds.near.tolist() == pytest.approx([7.5, 2.5, 0.0])
    assert bounds.far.tolist() == pytest.approx([8.5, 3.5, 0.7])
    assert bounds.branch.tolist() == [Branch.CERTAIN_MESH, Branch.UNCERTAIN_VOL, Branch.CERTAIN_MESH]


def test_sdf_bounds_outside_box_fall_back():
    bounds = sdf_grs_bounds(_rays(), _t(0.0), _t(40.0), _t(40.0), 0.5, 0.1)
    assert bounds.near.item() == 0.0
    assert bounds.far.item() == 20.0
    assert bounds.branch.item() == Branch.FALLBACK_FULL


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 30.0), st.floats(0.0, 30.0), st.floats(0.0, 1.0), st.floats(0.01, 2.0))
def test_bounds_are_ordered_and_inside_box(mesh_depth, volume_depth, mu, delta):
    rays = _rays(near=1.0, far=20.0)
    for bounds in (sdf_grs_bounds(rays, _t(mu), _t(mesh_depth), _t(volume_depth), delta, 0.5),
                   volumetric_grs_bounds(rays, _t(mu), _t(mesh_depth), delta, 0.5)):
        assert bounds.near.item() < bounds.far.item()
        assert 1.0 <= bounds.near.item() and bounds.far.item() <= 20.0


def test_true_surface_lies_inside_certain_shell():
    depth = _t(3.0, 7.25, 12.5)
    for delta in (0.01, 0.3, 2.0):
        bounds = sdf_grs_bounds(_rays(3), torch.zeros(3, dtype=torch.float64), depth, depth + 5.0, delta, 0.1)
        assert bool(((bounds.near <= depth) & (depth <= bounds.far)).all())


def test_pdf_sampling_of_uniform_weights_is_uniform():
    edges = torch.linspace(0.0, 1.0, 17, dtype=torch.float64)[None]
    samples = pdf_sample(edges, torch.ones(1, 16, dtype=torch.float64), 10_000,
                         generator=torch.Generator().manual_seed(0))
    assert stats.kstest(samples[0].numpy(), "uniform").statistic < 0.05
    assert bool((samples[0, 1:] >= samples[0, :-1]).all())


def test_pdf_sampling_single_bin():
    edges = torch.linspace(2.0, 6.0, 9, dtype=torch.float64)[None]
    weights = torch.zeros(1, 8, dtype=torch.float64)
    weights[0, 5] = 3.0
    samples = pdf_sample(edges, weights, 64, generator=torch.Generator().manual_seed(1))
    assert bool(((samples >= 4.5) & (samples <= 5.0)).all())


def test_pdf_sampling_zero_weights_is_stratified():
    edges = torch.tensor([[0.0, 1.0, 4.0]], dtype=torch.float64)
    samples = pdf_sample(edges, torch.zeros(1, 2, dtype=torch.float64), 4)
    assert samples[0].tolist() == pytest.approx([0.5, 1.5, 2.5, 3.5])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0), st.floats(0.5, 1.5))
def test_pdf_samples_stay_inside_bounds(seed, near, width):
    gen = torch.Generator().manual_seed(seed)
    edges = near + torch.sort(torch.rand(3, 9, generator=gen, dtype=torch.float64), dim=-1).values * width
    weights = torch.rand(3, 8, generator=gen, dtype=torch.float64)
    samples = pdf_sample(edges, weights, 20, generator=gen)
    assert bool((samples >= edges[:, :1]).all()) and bool((samples <= edges[:, -1:]).all())


def test_shell_schedule_closed_forms():
    schedule = ShellSchedule(extent=40.0, mesh_resolution=1024)
    assert schedule.initial == pytest.approx(2.0)
    delta = schedule.initial
    for _ in range(10):
        delta = shell_update(delta, schedule)
    assert delta == pytest.approx(0.05 * 0.8 ** 10 * 40.0)
    assert schedule.at_epoch(10) == pytest.approx(delta)
    for _ in range(100):
        delta = shell_update(delta, schedule)
    assert delta == 4 * 40.0 / 1024
