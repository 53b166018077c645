"""
Closed-form signed distances of the scene primitives and their union.

Everything is evaluated in float64 torch so that analytic normals come out
of autograd.
"""

import logging
import math
from typing import List

import torch
from cachetools import LRUCache, cached

from scene_data.models import PrimitiveKind, ScenePrimitive, SceneSpec, SemanticClass

logger = logging.getLogger(__name__)

MINI_STREET = "mini-street"


class SceneSpecError(Exception):
    """Raised when a scene description cannot be built."""
    pass


def _vec(values: List[float], like: torch.Tensor) -> torch.Tensor:
    return torch.tensor(values, dtype=like.dtype, device=like.device)


def plane_sdf(x: torch.Tensor, normal: List[float], offset: float) -> torch.Tensor:
    n = _vec(normal, x)
    n = n / n.norm()
    return (x * n).sum(dim=-1) - offset


def box_sdf(x: torch.Tensor, center: List[float], half_size: List[float], yaw_deg: float = 0.0) -> torch.Tensor:
    d = x - _vec(center, x)
    yaw = math.radians(yaw_deg)
    c, s = math.cos(yaw), math.sin(yaw)
    local = torch.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1], d[..., 2]], dim=-1)
    q = local.abs() - _vec(half_size, x)
    outside = q.clamp_min(0.0).norm(dim=-1)
    inside = q.max(dim=-1).values.clamp_max(0.0)
    return outside + inside


def cylinder_sdf(x: torch.Tensor, center: List[float], radius: float, height: float) -> torch.Tensor:
    """Capped cylinder along +z; ``center`` is the mid-height point of the axis."""
    d = x - _vec(center, x)
    radial = d[..., :2].norm(dim=-1) - radius
    axial = d[..., 2].abs() - 0.5 * height
    q = torch.stack([radial, axial], dim=-1)
    return q.clamp_min(0.0).norm(dim=-1) + q.max(dim=-1).values.clamp_max(0.0)


def sphere_sdf(x: torch.Tensor, center: List[float], radius: float) -> torch.Tensor:
    return (x - _vec(center, x)).norm(dim=-1) - radius


def primitive_sdf(primitive: ScenePrimitive, x: torch.Tensor) -> torch.Tensor:
    """Signed distance of one primitive at points [..., 3]."""
    kind = primitive.kind
    if kind == PrimitiveKind.PLANE:
        return plane_sdf(x, primitive.normal, primitive.offset)
    if kind == PrimitiveKind.BOX:
        return box_sdf(x, primitive.center, primitive.half_size, primitive.yaw_deg)
    if kind == PrimitiveKind.CYLINDER:
        return cylinder_sdf(x, primitive.center, primitive.radius, primitive.height)
    if kind == PrimitiveKind.SPHERE:
        return sphere_sdf(x, primitive.center, primitive.radius)
    raise SceneSpecError(f"unknown primitive kind '{kind}'")


class SceneSdf:
    """
    Union of primitives: SDF = min over primitives, semantic label of the
    nearest primitive.
    """

    def __init__(self, spec: SceneSpec):
        if not spec.primitives:
            raise SceneSpecError("scene description has no primitives")
        self.spec = spec
        self.box_min = torch.tensor(spec.box_min, dtype=torch.float64)
        self.box_max = torch.tensor(spec.box_max, dtype=torch.float64)
        self.extent = spec.extent
        self.labels = torch.tensor([p.semantic.label for p in spec.primitives], dtype=torch.long)
        self.albedos = torch.tensor([p.albedo for p in spec.primitives], dtype=torch.float64)
        logger.info(f"Built scene '{spec.name}' with {len(spec.primitives)} primitives")

    def __len__(self) -> int:
        return len(self.spec.primitives)

    def per_primitive(self, x: torch.Tensor) -> torch.Tensor:
        """Signed distance to every primitive, [..., P]."""
        return torch.stack([primitive_sdf(p, x) for p in self.spec.primitives], dim=-1)

    def sdf(self, x: torch.Tensor) -> torch.Tensor:
        return self.per_primitive(x).min(dim=-1).values

    __call__ = sdf

    def nearest_primitive(self, x: torch.Tensor) -> torch.Tensor:
        return self.per_primitive(x).argmin(dim=-1)

    def label(self, x: torch.Tensor) -> torch.Tensor:
        return self.labels.to(x.device)[self.nearest_primitive(x)]

    def albedo(self, x: torch.Tensor) -> torch.Tensor:
        return self.albedos.to(device=x.device, dtype=x.dtype)[self.nearest_primitive(x)]

    def gradient(self, x: torch.Tensor) -> torch.Tensor:
        """Analytic gradient of the union SDF (autograd through the closed forms)."""
        with torch.enable_grad():
            x = x.detach().to(torch.float64).requires_grad_(True)
            f = self.sdf(x)
            (grad,) = torch.autograd.grad(f.sum(), x)
        return grad

    def normals(self, x: torch.Tensor) -> torch.Tensor:
        grad = self.gradient(x)
        return grad / grad.norm(dim=-1, keepdim=True).clamp_min(1e-12)


def build_scene(spec: SceneSpec) -> SceneSdf:
    """Compose a scene description into a queryable union SDF."""
    return SceneSdf(spec)


# ============================================================================
# PRESETS
# ============================================================================

@cached(LRUCache(maxsize=8))
def _preset_json(name: str) -> str:
    if name != MINI_STREET:
        raise SceneSpecError(f"unknown scene preset '{name}'")
    primitives = [
        ScenePrimitive(kind=PrimitiveKind.PLANE, semantic=SemanticClass.GROUND,
                       albedo=[0.45, 0.45, 0.42], normal=[0.0, 0.0, 1.0], offset=0.0),
        ScenePrimitive(kind=PrimitiveKind.BOX, semantic=SemanticClass.WALL,
                       albedo=[0.72, 0.32, 0.25], center=[0.0, 0.7, 0.3], half_size=[0.9, 0.05, 0.3]),
        ScenePrimitive(kind=PrimitiveKind.BOX, semantic=SemanticClass.WALL,
                       albedo=[0.78, 0.72, 0.55], center=[0.0, -0.7, 0.3], half_size=[0.9, 0.05, 0.3]),
        ScenePrimitive(kind=PrimitiveKind.SPHERE, semantic=SemanticClass.VEGETATION,
                       albedo=[0.2, 0.55, 0.2], center=[0.0, -0.45, 0.08], radius=0.12),
    ]
    for x, y, radius in ((-0.4, 0.45, 0.03), (0.4, 0.45, 0.02), (-0.4, -0.45, 0.04), (0.4, -0.45, 0.025)):
        primitives.append(ScenePrimitive(
            kind=PrimitiveKind.CYLINDER, semantic=SemanticClass.POLE, albedo=[0.15, 0.17, 0.22],
            center=[x, y, 0.25], radius=radius, height=0.5,
        ))
    spec = SceneSpec(name=MINI_STREET, box_min=[-1.0, -1.0, -0.2], box_max=[1.0, 1.0, 1.8],
                     primitives=primitives)
    return spec.model_dump_json()


def preset_spec(name: str) -> SceneSpec:
    """A fresh copy of a named scene preset."""
    return SceneSpec.model_validate_json(_preset_json(name))
