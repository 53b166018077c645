"""
In-memory training dataset: stacked supervision images plus the world-space
ray of every pixel.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from render.rays import RayBundle, generate_camera_rays, make_ray_bundle
from scene_data.models import CameraRig, LidarCloud, SceneSpec, SyntheticScene

logger = logging.getLogger(__name__)


@dataclass
class TrainingDataset:
    """Supervision arrays are stacked per frame, ``[F, H, W, ...]``; pixel ids are flat indices."""
    spec: SceneSpec
    rig: CameraRig
    rgb: np.ndarray          # [F, H, W, 3] float32 in [0, 1]
    normal: np.ndarray       # [F, H, W, 3] float32
    depth: np.ndarray        # [F, H, W] float32, inf on sky
    semantic: np.ndarray     # [F, H, W] int64
    sky: np.ndarray          # [F, H, W] bool
    lidar: Optional[LidarCloud] = None
    root: Optional[Path] = None
    origins: np.ndarray = field(init=False, repr=False)
    directions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        intr = self.rig.intrinsics
        origins, directions = [], []
        for frame in self.rig.frames:
            o, d = generate_camera_rays(intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, frame.matrix)
            origins.append(o)
            directions.append(d)
        self.origins = np.concatenate(origins).astype(np.float32)
        self.directions = np.concatenate(directions).astype(np.float32)

    @classmethod
    def from_scene(cls, scene: SyntheticScene) -> "TrainingDataset":
        frames = scene.frames
        return cls(
            spec=scene.spec,
            rig=scene.rig,
            rgb=np.stack([f.rgb for f in frames]).astype(np.float32),
            normal=np.stack([f.normal for f in frames]).astype(np.float32),
            depth=np.stack([f.depth for f in frames]).astype(np.float32),
            semantic=np.stack([f.semantic for f in frames]).astype(np.int64),
            sky=np.stack([f.sky for f in frames]).astype(bool),
            lidar=scene.lidar,
        )

    @property
    def num_frames(self) -> int:
        return self.rgb.shape[0]

    @property
    def height(self) -> int:
        return self.rgb.shape[1]

    @property
    def width(self) -> int:
        return self.rgb.shape[2]

    @property
    def num_pixels(self) -> int:
        return self.num_frames * self.height * self.width

    @property
    def box_min(self) -> torch.Tensor:
        return torch.tensor(self.spec.box_min, dtype=torch.float32)

    @property
    def box_max(self) -> torch.Tensor:
        return torch.tensor(self.spec.box_max, dtype=torch.float32)

    @property
    def extent(self) -> float:
        return self.spec.extent

    def frame_pixel_ids(self, frame_index: int) -> torch.Tensor:
        per_frame = self.height * self.width
        return torch.arange(frame_index * per_frame, (frame_index + 1) * per_frame, dtype=torch.long)

    def rays(self, pixel_ids: torch.Tensor) -> RayBundle:
        ids = pixel_ids.cpu().numpy()
        return make_ray_bundle(
            torch.from_numpy(self.origins[ids]),
            torch.from_numpy(self.directions[ids]),
            self.box_min,
            self.box_max,
            pixel_ids=pixel_ids,
        )

    def targets(self, pixel_ids: torch.Tensor) -> Dict[str, torch.Tensor]:
        """Ground-truth color, normal, label and sky flag of the given pixels."""
        ids = pixel_ids.cpu().numpy()
        return {
            "rgb": torch.from_numpy(self.rgb.reshape(-1, 3)[ids]),
            "normal": torch.from_numpy(self.normal.reshape(-1, 3)[ids]),
            "semantic": torch.from_numpy(self.semantic.reshape(-1)[ids]),
            "sky": torch.from_numpy(self.sky.reshape(-1)[ids]),
        }
