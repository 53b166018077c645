"""
Rays, ray samples and the pinhole camera model.

Cameras follow the OpenCV convention (x right, y down, z forward) and
``c2w`` is a 4x4 camera-to-world matrix. Sample intervals along a ray are
stored as bin edges; midpoints and widths are derived.
"""

import logging
from dataclasses import dataclass, fields, replace
from typing import Tuple, Union

import numpy as np
import torch

logger = logging.getLogger(__name__)


@dataclass
class RayBundle:
    """A batch of rays with their box-clipped near/far bounds."""
    origins: torch.Tensor       # [R, 3]
    directions: torch.Tensor    # [R, 3], unit length
    pixel_ids: torch.Tensor     # [R] flat index into the dataset's pixels (-1 if none)
    near: torch.Tensor          # [R]
    far: torch.Tensor           # [R]

    def __len__(self) -> int:
        return self.origins.shape[0]

    def __getitem__(self, index) -> "RayBundle":
        return RayBundle(**{f.name: getattr(self, f.name)[index] for f in fields(self)})

    def points(self, t: torch.Tensor) -> torch.Tensor:
        """Positions ``o + t u`` for distances ``t`` of shape [R] or [R, N]."""
        if t.dim() == 1:
            return self.origins + t[:, None] * self.directions
        return self.origins[:, None, :] + t[..., None] * self.directions[:, None, :]

    def to(self, dtype: torch.dtype) -> "RayBundle":
        return replace(
            self,
            origins=self.origins.to(dtype),
            directions=self.directions.to(dtype),
            near=self.near.to(dtype),
            far=self.far.to(dtype),
        )


@dataclass
class RaySamples:
    """Quadrature bins along each ray, ``edges`` sorted ascending, shape [R, N+1]."""
    edges: torch.Tensor

    @property
    def num_bins(self) -> int:
        return self.edges.shape[-1] - 1

    @property
    def mids(self) -> torch.Tensor:
        return 0.5 * (self.edges[..., 1:] + self.edges[..., :-1])

    @property
    def widths(self) -> torch.Tensor:
        return self.edges[..., 1:] - self.edges[..., :-1]

    def normalized_edges(self) -> torch.Tensor:
        """Edges mapped to s in [0, 1] over each ray's sampled interval."""
        lo = self.edges[..., :1]
        span = (self.edges[..., -1:] - lo).clamp_min(1e-12)
        return (self.edges - lo) / span


def ray_box_intersect(
    origins: torch.Tensor,
    directions: torch.Tensor,
    box_min: torch.Tensor,
    box_max: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Slab test against an axis-aligned box.

    Returns:
        (t_near clamped at 0, t_far, hit mask)
    """
    box_min = box_min.to(origins.dtype)
    box_max = box_max.to(origins.dtype)
    safe = torch.where(directions.abs() < 1e-12, torch.full_like(directions, 1e-12), directions)
    inv = 1.0 / safe
    t0 = (box_min - origins) * inv
    t1 = (box_max - origins) * inv
    t_near = torch.minimum(t0, t1).amax(dim=-1).clamp_min(0.0)
    t_far = torch.maximum(t0, t1).amin(dim=-1)
    hit = t_far > t_near
    return t_near, t_far, hit


def make_ray_bundle(
    origins: torch.Tensor,
    directions: torch.Tensor,
    box_min: torch.Tensor,
    box_max: torch.Tensor,
    pixel_ids: torch.Tensor = None,
) -> RayBundle:
    """Normalize directions and clip rays to the scene box (misses get a tiny interval)."""
    directions = directions / directions.norm(dim=-1, keepdim=True)
    near, far, hit = ray_box_intersect(origins, directions, box_min, box_max)
    far = torch.where(hit, far, near + 1e-4)
    if pixel_ids is None:
        pixel_ids = torch.full((origins.shape[0],), -1, dtype=torch.long)
    return RayBundle(origins=origins, directions=directions, pixel_ids=pixel_ids, near=near, far=far)


def camera_ray_directions(
    fx: float, fy: float, cx: float, cy: float, width: int, height: int,
) -> np.ndarray:
    """Unit directions in camera coordinates through pixel centres, shape [H, W, 3]."""
    u, v = np.meshgrid(np.arange(width, dtype=np.float64) + 0.5, np.arange(height, dtype=np.float64) + 0.5)
    dirs = np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)], axis=-1)
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def generate_camera_rays(
    fx: float, fy: float, cx: float, cy: float, width: int, height: int,
    c2w: Union[np.ndarray, torch.Tensor],
) -> Tuple[np.ndarray, np.ndarray]:
    """World-space (origins, directions), each [H*W, 3], row-major pixel order."""
    c2w = np.asarray(c2w, dtype=np.float64)
    dirs_cam = camera_ray_directions(fx, fy, cx, cy, width, height).reshape(-1, 3)
    dirs = dirs_cam @ c2w[:3, :3].T
    origins = np.broadcast_to(c2w[:3, 3], dirs.shape).copy()
    return origins, dirs
