"""
Ray batch composition: shuffled single pixels plus square pixel patches.
"""

import logging
from dataclasses import dataclass

import torch

from scene_data.dataset import TrainingDataset

logger = logging.getLogger(__name__)

_SEED_MIX = 0x9E3779B97F4A7C15
_SEED_MASK = (1 << 63) - 1


def derive_seed(seed: int, counter: int, stream: int = 0) -> int:
    """Deterministic 63-bit seed for (run seed, step or epoch counter, stream)."""
    return ((seed * _SEED_MIX) ^ (counter * 0xBF58476D1CE4E5B9) ^ (stream * 0x94D049BB133111EB)) & _SEED_MASK


def step_generator(seed: int, step: int) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed(seed, step, stream=1))


@dataclass
class RayBatch:
    """Pixel ids; the trailing ``num_patches * patch_size**2`` ids form row-major patches."""
    pixel_ids: torch.Tensor
    num_patches: int
    patch_size: int

    def __len__(self) -> int:
        return self.pixel_ids.shape[0]

    @property
    def patch_start(self) -> int:
        return len(self) - self.num_patches * self.patch_size ** 2

    def patches(self, values: torch.Tensor) -> torch.Tensor:
        """Per-ray values [R, ...] reshaped to [P, S, S, ...] for the patch rays."""
        tail = values[self.patch_start:]
        return tail.reshape(self.num_patches, self.patch_size, self.patch_size, *values.shape[1:])


class BatchSampler:
    """
    One shuffled pass over all pixels per epoch for the single-pixel part;
    patches are drawn fresh every step.
    """

    def __init__(self, dataset: TrainingDataset, rays_per_batch: int, patch_size: int = 8,
                 patch_fraction: float = 0.5, seed: int = 0):
        self.num_frames = dataset.num_frames
        self.height = dataset.height
        self.width = dataset.width
        self.num_pixels = dataset.num_pixels
        self.seed = seed
        self.patch_size = patch_size
        fits = patch_size <= min(self.height, self.width)
        self.num_patches = int(rays_per_batch * patch_fraction) // (patch_size ** 2) if fits else 0
        self.num_single = rays_per_batch - self.num_patches * patch_size ** 2
        self._epoch = None
        self._order = None

    def _permutation(self, epoch: int) -> torch.Tensor:
        if self._epoch != epoch:
            generator = torch.Generator().manual_seed(derive_seed(self.seed, epoch, stream=2))
            self._order = torch.randperm(self.num_pixels, generator=generator)
            self._epoch = epoch
        return self._order

    def sample(self, epoch: int, step_in_epoch: int, generator: torch.Generator) -> RayBatch:
        order = self._permutation(epoch)
        start = (step_in_epoch * self.num_single) % self.num_pixels
        idx = (torch.arange(self.num_single) + start) % self.num_pixels
        singles = order[idx]

        size = self.patch_size
        if self.num_patches:
            frame = torch.randint(0, self.num_frames, (self.num_patches,), generator=generator)
            top = torch.randint(0, self.height - size + 1, (self.num_patches,), generator=generator)
            left = torch.randint(0, self.width - size + 1, (self.num_patches,), generator=generator)
            dy, dx = torch.meshgrid(torch.arange(size), torch.arange(size), indexing="ij")
            rows = top[:, None, None] + dy
            cols = left[:, None, None] + dx
            patch_ids = frame[:, None, None] * (self.height * self.width) + rows * self.width + cols
            ids = torch.cat([singles, patch_ids.reshape(-1)])
        else:
            ids = singles
        return RayBatch(pixel_ids=ids, num_patches=self.num_patches, patch_size=size)
