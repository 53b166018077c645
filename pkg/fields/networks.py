"""
Trainable implicit fields.

* VolumetricField - density, view-dependent color and semantic logits.
* SdfField - signed distance (world units), color and the logistic scale s.
* ProposalField - density-only estimator on a coarser grid.
* SkyHead - color of the background as a function of direction.

Every field is a hash grid followed by small MLPs. Parameter initialization
draws from an explicit torch.Generator so that two bundles built with the
same seed are identical.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Tuple, Union

import torch
import torch.nn as nn

from config import FieldConfig
from fields.encoding import HashGridEncoding, SHEncoding

logger = logging.getLogger(__name__)


class FieldError(Exception):
    """Raised for invalid field queries (e.g. zero-length view directions)."""
    pass


def _init_linear(layer: nn.Linear, generator: Optional[torch.Generator]) -> None:
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        if layer.bias is not None:
            layer.bias.uniform_(-bound, bound, generator=generator)


def normalize_directions(directions: torch.Tensor) -> torch.Tensor:
    """Unit-normalize view directions; zero vectors are rejected."""
    norm = directions.norm(dim=-1, keepdim=True)
    if bool((norm <= 1e-12).any()):
        raise FieldError("view direction has zero length")
    return directions / norm


class FieldMlp(nn.Module):
    """Plain MLP: ``hidden_layers`` hidden layers of ``hidden_units`` then a linear output."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        hidden_layers: int = 2,
        hidden_units: int = 64,
        activation: str = "relu",
        softplus_beta: float = 100.0,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        dims = [in_dim] + [hidden_units] * hidden_layers + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        for layer in self.layers:
            _init_linear(layer, generator)
        if activation == "relu":
            self.activation: nn.Module = nn.ReLU()
        elif activation == "softplus":
            self.activation = nn.Softplus(beta=softplus_beta)
        else:
            raise FieldError(f"unknown activation '{activation}'")

    @property
    def output_layer(self) -> nn.Linear:
        return self.layers[-1]

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        for layer in self.layers[:-1]:
            h = self.activation(layer(h))
        return self.layers[-1](h)


def _init_density_head(layer: nn.Linear, density_init: float) -> None:
    """Row 0 of the output layer gives the raw density: start it at log(density_init)."""
    with torch.no_grad():
        layer.weight[0].zero_()
        layer.bias[0] = math.log(density_init)


def _density_activation(raw: torch.Tensor, clamp: float) -> torch.Tensor:
    return torch.exp(raw.clamp(-clamp, clamp))


@dataclass
class VolumetricOutputs:
    density: torch.Tensor
    color: torch.Tensor
    semantics: torch.Tensor


class VolumetricField(nn.Module):
    """Radiance field: density from position only, color from position and direction."""

    def __init__(self, config: FieldConfig, box_min, box_max, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.density_clamp = config.density_clamp
        self.encoding = HashGridEncoding(
            box_min, box_max,
            levels=config.levels,
            coarsest_res=config.coarsest_res,
            finest_res=config.finest_res,
            log2_table_size=config.log2_table_size,
            features_per_level=config.features_per_level,
            generator=generator,
        )
        self.dir_encoding = SHEncoding(config.sh_degree)
        self.geo_feat_dim = config.geo_feat_dim
        self.base_mlp = FieldMlp(
            self.encoding.output_dim, 1 + config.geo_feat_dim,
            config.hidden_layers, config.hidden_units, "relu", generator=generator,
        )
        _init_density_head(self.base_mlp.output_layer, config.density_init)
        self.color_mlp = FieldMlp(
            config.geo_feat_dim + self.dir_encoding.output_dim, 3,
            config.hidden_layers, config.hidden_units, "relu", generator=generator,
        )
        self.semantic_mlp = FieldMlp(
            config.geo_feat_dim, config.num_classes, 1, config.hidden_units, "relu", generator=generator,
        )

    def _base(self, x: torch.Tensor):
        h = self.base_mlp(self.encoding(x))
        density = _density_activation(h[..., 0], self.density_clamp)
        return density, h[..., 1:]

    def density(self, x: torch.Tensor) -> torch.Tensor:
        return self._base(x)[0]

    def forward(self, x: torch.Tensor, directions: torch.Tensor) -> VolumetricOutputs:
        directions = normalize_directions(directions)
        density, geo = self._base(x)
        color = torch.sigmoid(self.color_mlp(torch.cat([geo, self.dir_encoding(directions)], dim=-1)))
        semantics = self.semantic_mlp(geo)
        return VolumetricOutputs(density=density, color=color, semantics=semantics)


class SdfField(nn.Module):
    """
    Signed distance field in world units.

    The trunk sees box-centred coordinates concatenated with hash features and
    is geometrically initialized so that f starts as a sphere of radius
    ``sdf_init_radius`` times the box half-extent.
    """

    def __init__(self, config: FieldConfig, box_min, box_max, generator: Optional[torch.Generator] = None):
        super().__init__()
        box_min_t = torch.as_tensor(box_min, dtype=torch.float32).reshape(3)
        box_max_t = torch.as_tensor(box_max, dtype=torch.float32).reshape(3)
        self.register_buffer("center", 0.5 * (box_min_t + box_max_t))
        self.register_buffer("half_extent", 0.5 * (box_max_t - box_min_t).max())

        self.encoding = HashGridEncoding(
            box_min_t, box_max_t,
            levels=config.levels,
            coarsest_res=config.coarsest_res,
            finest_res=config.finest_res,
            log2_table_size=config.log2_table_size,
            features_per_level=config.features_per_level,
            generator=generator,
        )
        self.dir_encoding = SHEncoding(config.sh_degree)
        self.geo_feat_dim = config.geo_feat_dim
        self.trunk = FieldMlp(
            3 + self.encoding.output_dim, 1 + config.geo_feat_dim,
            config.hidden_layers, config.hidden_units, "softplus", generator=generator,
        )
        self._geometric_init(config.sdf_init_radius, generator)
        self.color_mlp = FieldMlp(
            config.geo_feat_dim + self.dir_encoding.output_dim, 3,
            config.hidden_layers, config.hidden_units, "relu", generator=generator,
        )
        self.log_scale = nn.Parameter(torch.tensor(math.log(config.sdf_scale_init)))

    def _geometric_init(self, radius: float, generator: Optional[torch.Generator]) -> None:
        layers = self.trunk.layers
        with torch.no_grad():
            for i, layer in enumerate(layers):
                out_dim, in_dim = layer.weight.shape
                if i == len(layers) - 1:
                    layer.weight.normal_(math.sqrt(math.pi) / math.sqrt(in_dim), 1e-4, generator=generator)
                    layer.bias.fill_(-radius)
                else:
                    layer.weight.normal_(0.0, math.sqrt(2.0) / math.sqrt(out_dim), generator=generator)
                    layer.bias.zero_()
                    if i == 0:
                        # hash features start disconnected
                        layer.weight[:, 3:].zero_()

    @property
    def scale(self) -> torch.Tensor:
        """Logistic slope s of Phi_s, always positive."""
        return torch.exp(self.log_scale)

    def _trunk(self, x: torch.Tensor):
        centred = (x - self.center.to(x.dtype)) / self.half_extent.to(x.dtype)
        h = self.trunk(torch.cat([centred, self.encoding(x)], dim=-1))
        return h[..., 0] * self.half_extent.to(x.dtype), h[..., 1:]

    def signed_distance(self, x: torch.Tensor) -> torch.Tensor:
        return self._trunk(x)[0]

    def color(self, x: torch.Tensor, directions: torch.Tensor) -> torch.Tensor:
        directions = normalize_directions(directions)
        _, geo = self._trunk(x)
        return torch.sigmoid(self.color_mlp(torch.cat([geo, self.dir_encoding(directions)], dim=-1)))

    def forward(self, x: torch.Tensor, directions: torch.Tensor):
        """Returns (f, color)."""
        directions = normalize_directions(directions)
        sdf, geo = self._trunk(x)
        color = torch.sigmoid(self.color_mlp(torch.cat([geo, self.dir_encoding(directions)], dim=-1)))
        return sdf, color


class ProposalField(nn.Module):
    """Density-only estimator used to place samples for the next stage."""

    def __init__(self, config: FieldConfig, box_min, box_max, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.density_clamp = config.density_clamp
        self.encoding = HashGridEncoding(
            box_min, box_max,
            levels=config.proposal_levels,
            coarsest_res=config.coarsest_res,
            finest_res=config.proposal_finest_res,
            log2_table_size=config.proposal_log2_table_size,
            features_per_level=config.features_per_level,
            generator=generator,
        )
        self.mlp = FieldMlp(
            self.encoding.output_dim, 1, 1, config.proposal_hidden_units, "relu", generator=generator,
        )
        _init_density_head(self.mlp.output_layer, config.density_init)

    def density(self, x: torch.Tensor) -> torch.Tensor:
        return _density_activation(self.mlp(self.encoding(x))[..., 0], self.density_clamp)

    forward = density


class SkyHead(nn.Module):
    def __init__(self, config: FieldConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.dir_encoding = SHEncoding(config.sh_degree)
        self.mlp = FieldMlp(self.dir_encoding.output_dim, 3, 1, config.sky_hidden_units, "relu", generator=generator)

    def forward(self, directions: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.mlp(self.dir_encoding(normalize_directions(directions))))


class FieldBundle(nn.Module):
    """All trainable fields of one run."""

    def __init__(self, config: FieldConfig, box_min, box_max, seed: int = 0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.volumetric = VolumetricField(config, box_min, box_max, generator)
        self.sdf = SdfField(config, box_min, box_max, generator)
        self.proposals = nn.ModuleList(
            [ProposalField(config, box_min, box_max, generator) for _ in range(2)]
        )
        self.sky = SkyHead(config, generator)
        logger.info(
            f"FieldBundle initialized (seed {seed}): "
            f"{sum(p.numel() for p in self.parameters())} parameters"
        )

    def volumetric_parameters(self) -> Iterator[Tuple[str, nn.Parameter]]:
        """Volumetric field, both proposals and the sky head share one optimizer."""
        for prefix in ("volumetric", "proposals", "sky"):
            yield from getattr(self, prefix).named_parameters(prefix=prefix)

    def sdf_parameters(self) -> Iterator[Tuple[str, nn.Parameter]]:
        yield from self.sdf.named_parameters(prefix="sdf")

    def take_outside_points(self) -> int:
        """Points clamped into the box by any hash grid since the last call; resets the counters."""
        total = 0
        for module in self.modules():
            if isinstance(module, HashGridEncoding):
                total += module.outside_points
                module.outside_points = 0
        return total


def spatial_gradient(
    field: Union[SdfField, Callable[[torch.Tensor], torch.Tensor]],
    x: torch.Tensor,
    create_graph: bool = True,
) -> torch.Tensor:
    """
    Exact gradient of a scalar field w.r.t. its input points.

    ``field`` may be an SdfField or any callable mapping ``[..., 3]`` to
    ``[...]``. With ``create_graph`` the result stays differentiable w.r.t.
    the field parameters (needed by the eikonal and normal terms).
    """
    fn = field.signed_distance if isinstance(field, SdfField) else field
    with torch.enable_grad():
        x = x.detach().requires_grad_(True)
        value = fn(x)
        (grad,) = torch.autograd.grad(
            value, x, grad_outputs=torch.ones_like(value), create_graph=create_graph,
        )
    return grad
