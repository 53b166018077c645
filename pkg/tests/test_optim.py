"""Gradient plumbing, Adam and the learning-rate schedule."""

import math

import pytest
import torch
import torch.nn as nn

from config import FieldConfig
from fields import VolumetricField
from optim import NonFiniteLossError, ParameterStore, adam_step, backward, cosine_lr
from render import alpha_from_density, composite


def test_quadratic_gradient_is_two_theta():
    theta = nn.Parameter(torch.tensor([1.5, -2.0, 0.25], dtype=torch.float64))
    store = ParameterStore("q", [("theta", theta)])
    backward((theta ** 2).sum(), [store])
    assert torch.equal(theta.grad, 2.0 * theta.detach())


def test_disconnected_parameter_gets_zero_gradient():
    a = nn.Parameter(torch.tensor([1.0]))
    b = nn.Parameter(torch.tensor([3.0]))
    store = ParameterStore("ab", [("a", a), ("b", b)])
    norms = backward((a * 4.0).sum(), [store])
    assert torch.equal(b.grad, torch.zeros(1))
    assert norms["ab"] == pytest.approx(4.0)


def test_non_finite_term_aborts_without_touching_gradients():
    theta = nn.Parameter(torch.tensor([1.0]))
    store = ParameterStore("t", [("theta", theta)])
    bad = theta.sum() * torch.tensor(float("nan"))
    with pytest.raises(NonFiniteLossError) as info:
        backward(theta.sum() + bad, [store], {"good": theta.sum(), "eikonal": bad})
    assert info.value.term == "eikonal"
    assert theta.grad is None


def test_rendering_loss_gradients_match_finite_differences():
    config = FieldConfig(levels=2, coarsest_res=2, finest_res=4, log2_table_size=8, hidden_units=8,
                         hidden_layers=1, geo_feat_dim=3, sh_degree=2)
    field = VolumetricField(config, [-1.0] * 3, [1.0] * 3, generator=torch.Generator().manual_seed(0)).double()
    with torch.no_grad():
        field.encoding.table.normal_(0.0, 0.3, generator=torch.Generator().manual_seed(1))

    gen = torch.Generator().manual_seed(2)
    origins = torch.tensor([[-0.9, -0.3, 0.1], [-0.9, 0.2, -0.4], [-0.8, 0.5, 0.5], [-0.95, -0.6, -0.2]],
                           dtype=torch.float64)
    directions = torch.nn.functional.normalize(
        torch.tensor([[1.0, 0.1, 0.0], [1.0, -0.2, 0.1], [1.0, -0.3, -0.3], [1.0, 0.4, 0.2]], dtype=torch.float64),
        dim=-1)
    target = torch.rand(4, 3, generator=gen, dtype=torch.float64)
    edges = torch.linspace(0.0, 1.6, 9, dtype=torch.float64).expand(4, -1)
    mids = 0.5 * (edges[:, 1:] + edges[:, :-1])
    widths = edges[:, 1:] - edges[:, :-1]

    def loss_fn():
        x = origins[:, None, :] + mids[..., None] * directions[:, None, :]
        out = field(x, directions[:, None, :].expand_as(x))
        rendered = composite(alpha_from_density(out.density, widths), out.color, mids)
        return ((rendered.color - target) ** 2).mean() + 0.1 * rendered.depth.mean()

    store = ParameterStore("vol", field.named_parameters())
    backward(loss_fn(), [store])
    h = 1e-6
    for name, param in store.parameters.items():
        flat_grad = param.grad.reshape(-1)
        # largest-gradient entries plus the first few
        picks = set(flat_grad.abs().topk(min(3, flat_grad.numel())).indices.tolist()) | {0}
        for i in picks:
            with torch.no_grad():
                original = param.view(-1)[i].item()
                param.view(-1)[i] = original + h
                up = loss_fn().item()
                param.view(-1)[i] = original - h
                down = loss_fn().item()
                param.view(-1)[i] = original
            fd = (up - down) / (2 * h)
            analytic = flat_grad[i].item()
            assert abs(fd - analytic) <= 1e-5 * max(abs(fd), abs(analytic)) + 1e-9, name


def test_constant_gradient_moves_parameter_monotonically():
    theta = nn.Parameter(torch.tensor([0.0]))
    store = ParameterStore("c", [("theta", theta)], lr=1e-2)
    previous = 0.0
    for _ in range(50):
        theta.grad = torch.tensor([0.7])
        adam_step(store, 1e-2)
        current = theta.item()
        assert current < previous
        previous = current
    assert store.step_count == 50


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 1000) == pytest.approx(1e-2)
    assert cosine_lr(1000, 1000) == pytest.approx(1e-4)
    assert cosine_lr(500, 1000) == pytest.approx((1e-2 + 1e-4) / 2)
    assert cosine_lr(2000, 1000) == pytest.approx(1e-4)


def test_adam_converges_on_quadratic():
    theta = nn.Parameter(torch.tensor([0.0], dtype=torch.float64))
    store = ParameterStore("q", [("theta", theta)])
    steps = 500
    for step in range(steps):
        backward(((theta - 3.0) ** 2).sum(), [store])
        adam_step(store, cosine_lr(step, steps, 0.1, 1e-4))
    assert abs(theta.item() - 3.0) < 1e-3


def test_export_import_restores_values_and_moments():
    theta = nn.Parameter(torch.tensor([1.0, 2.0]))
    store = ParameterStore("s", [("theta", theta)])
    for _ in range(3):
        backward((theta ** 2).sum(), [store])
        adam_step(store, 1e-2)
    state = store.export_state()

    other_theta = nn.Parameter(torch.zeros(2))
    other = ParameterStore("s", [("theta", other_theta)])
    other.import_state(state)
    assert torch.equal(other_theta.detach(), theta.detach())
    backward((theta ** 2).sum(), [store])
    backward((other_theta ** 2).sum(), [other])
    adam_step(store, 1e-2)
    adam_step(other, 1e-2)
    assert torch.equal(other_theta.detach(), theta.detach())
    assert math.isclose(float(state["theta"]["step"][0]), 3.0)
