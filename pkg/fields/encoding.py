"""
Positional and directional encodings.

HashGridEncoding is a multiresolution hash grid over the scene box:
per level a table of trainable feature vectors indexed either densely (when
the level's corner lattice fits in the table) or through an XOR spatial hash,
with trilinear interpolation inside cells. Collisions are not resolved;
colliding cells share (and average gradients into) the same entries.

SHEncoding evaluates real spherical harmonics up to a given number of bands.
"""

import logging
import math
from typing import List, Optional, Tuple, Union

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)

HASH_PRIMES = (1, 2654435761, 805459861)

# Corner offsets of a unit cell, bit i of the corner id selects axis i
_CORNERS = [((c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1) for c in range(8)]


class HashGridEncoding(nn.Module):
    """
    Multiresolution hash encoding of points inside an axis-aligned box.

    Output length is ``levels * features_per_level``. Level ``l`` has
    ``floor(coarsest_res * growth**l)`` cells per axis with
    ``growth = exp((ln finest_res - ln coarsest_res) / (levels - 1))``.
    Points are normalized to the unit cube first; points outside the box are
    clamped to it, counted in ``outside_points`` and reported per point
    through ``return_outside``.
    """

    def __init__(
        self,
        box_min: Union[torch.Tensor, List[float]],
        box_max: Union[torch.Tensor, List[float]],
        levels: int = 16,
        coarsest_res: int = 16,
        finest_res: int = 2048,
        log2_table_size: int = 19,
        features_per_level: int = 2,
        init_scale: float = 1e-4,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.levels = levels
        self.coarsest_res = coarsest_res
        self.finest_res = finest_res
        self.table_size = 2 ** log2_table_size
        self.features_per_level = features_per_level
        self.growth = (
            math.exp((math.log(finest_res) - math.log(coarsest_res)) / (levels - 1))
            if levels > 1 else 1.0
        )
        self.resolutions: List[int] = [
            int(math.floor(coarsest_res * self.growth ** level)) for level in range(levels)
        ]
        # Guard against floor() rounding the last level below the requested finest
        if levels > 1:
            self.resolutions[-1] = max(self.resolutions[-1], finest_res)

        self.dense: List[bool] = []
        offsets = [0]
        for res in self.resolutions:
            corners = (res + 1) ** 3
            is_dense = corners <= self.table_size
            self.dense.append(is_dense)
            offsets.append(offsets[-1] + (corners if is_dense else self.table_size))
        self.offsets = offsets

        self.register_buffer("box_min", torch.as_tensor(box_min, dtype=torch.float32).reshape(3))
        self.register_buffer("box_max", torch.as_tensor(box_max, dtype=torch.float32).reshape(3))

        table = torch.empty(offsets[-1], features_per_level)
        table.uniform_(-init_scale, init_scale, generator=generator)
        self.table = nn.Parameter(table)
        self.outside_points = 0

        logger.debug(
            f"HashGridEncoding: {levels} levels, res {self.resolutions[0]}..{self.resolutions[-1]}, "
            f"{offsets[-1]} entries"
        )

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_level

    def normalize(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Map world points to [0,1]^3. Returns (clamped unit coords, outside mask)."""
        box_min = self.box_min.to(x.dtype)
        extent = (self.box_max - self.box_min).to(x.dtype)
        unit = (x - box_min) / extent
        outside = ((unit < 0.0) | (unit > 1.0)).any(dim=-1)
        return unit.clamp(0.0, 1.0), outside

    def corner_indices(self, corner: torch.Tensor, level: int) -> torch.Tensor:
        """Table row of integer lattice corners ``[..., 3]`` at ``level``."""
        res = self.resolutions[level]
        if self.dense[level]:
            stride = res + 1
            idx = corner[..., 0] + corner[..., 1] * stride + corner[..., 2] * stride * stride
        else:
            idx = (
                (corner[..., 0] * HASH_PRIMES[0])
                ^ (corner[..., 1] * HASH_PRIMES[1])
                ^ (corner[..., 2] * HASH_PRIMES[2])
            ) & (self.table_size - 1)
        return idx + self.offsets[level]

    def encode_level(self, unit: torch.Tensor, level: int) -> torch.Tensor:
        """Trilinearly interpolated features of one level for unit-cube points."""
        res = self.resolutions[level]
        pos = unit * res
        cell = torch.floor(pos).clamp(0, res - 1)
        frac = pos - cell
        cell = cell.long()

        table = self.table.to(unit.dtype)
        out = torch.zeros(*unit.shape[:-1], self.features_per_level, dtype=unit.dtype, device=unit.device)
        for ox, oy, oz in _CORNERS:
            offset = torch.tensor([ox, oy, oz], dtype=torch.long, device=unit.device)
            idx = self.corner_indices(cell + offset, level)
            wx = frac[..., 0] if ox else 1.0 - frac[..., 0]
            wy = frac[..., 1] if oy else 1.0 - frac[..., 1]
            wz = frac[..., 2] if oz else 1.0 - frac[..., 2]
            weight = (wx * wy * wz).unsqueeze(-1)
            out = out + weight * table[idx]
        return out

    def forward(
        self, x: torch.Tensor, return_outside: bool = False
    ) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
        unit, outside = self.normalize(x)
        self.outside_points += int(outside.sum())
        features = torch.cat([self.encode_level(unit, level) for level in range(self.levels)], dim=-1)
        if return_outside:
            return features, outside
        return features


class SHEncoding(nn.Module):
    """Real spherical harmonics of a unit direction; ``degree`` bands give degree**2 outputs."""

    def __init__(self, degree: int = 4):
        super().__init__()
        if not 1 <= degree <= 4:
            raise ValueError(f"SH degree must be in [1, 4], got {degree}")
        self.degree = degree

    @property
    def output_dim(self) -> int:
        return self.degree ** 2

    def forward(self, directions: torch.Tensor) -> torch.Tensor:
        x, y, z = directions.unbind(-1)
        bands = [
            # l = 0
            0.28209479177387814 * torch.ones_like(x),
            # l = 1
            0.4886025119029199 * y,
            0.4886025119029199 * z,
            0.4886025119029199 * x,
            # l = 2
            1.0925484305920792 * x * y,
            1.0925484305920792 * y * z,
            0.31539156525252005 * (2 * z * z - x * x - y * y),
            1.0925484305920792 * z * x,
            0.5462742152960396 * (x * x - y * y),
            # l = 3
            0.5900435899266435 * y * (3 * x * x - y * y),
            2.890611442640554 * x * y * z,
            0.4570457994644658 * y * (5 * z * z - 1),
            0.3731763325901154 * z * (5 * z * z - 3),
            0.4570457994644658 * x * (5 * z * z - 1),
            1.445305721320277 * z * (x * x - y * y),
            0.5900435899266435 * x * (x * x - 3 * y * y),
        ]
        return torch.stack(bands[: self.output_dim], dim=-1)
