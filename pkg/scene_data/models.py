"""
Pydantic models for synthetic scenes, camera rigs and generated datasets.
These models ensure data validation and type safety.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator


class SemanticClass(str, Enum):
    """Semantic classes; the declaration order defines the label ids."""
    GROUND = "ground"
    WALL = "wall"
    POLE = "pole"
    VEGETATION = "vegetation"
    SKY = "sky"

    @property
    def label(self) -> int:
        return SEMANTIC_CLASSES.index(self)

    @classmethod
    def from_label(cls, label: int) -> "SemanticClass":
        return SEMANTIC_CLASSES[label]


SEMANTIC_CLASSES: List[SemanticClass] = list(SemanticClass)
SKY_LABEL = SEMANTIC_CLASSES.index(SemanticClass.SKY)


class PrimitiveKind(str, Enum):
    PLANE = "plane"
    BOX = "box"
    CYLINDER = "cylinder"
    SPHERE = "sphere"


class ScenePrimitive(BaseModel):
    """
    One analytic shape.

    * plane: points with ``dot(normal, x) = offset``
    * box: ``center``, ``half_size`` and a yaw about +z
    * cylinder: vertical, capped, ``center`` at mid-height, ``radius``, ``height``
    * sphere: ``center``, ``radius``
    """
    kind: PrimitiveKind
    semantic: SemanticClass
    albedo: List[float] = Field(default_factory=lambda: [0.5, 0.5, 0.5])
    center: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    normal: List[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0])
    offset: float = 0.0
    half_size: List[float] = Field(default_factory=lambda: [0.5, 0.5, 0.5])
    yaw_deg: float = 0.0
    radius: float = 0.5
    height: float = 1.0

    @field_validator("albedo", "center", "normal", "half_size")
    @classmethod
    def _three_values(cls, value: List[float]) -> List[float]:
        if len(value) != 3:
            raise ValueError("expected 3 values")
        return value


class SceneSpec(BaseModel):
    """Scene description: primitives inside an axis-aligned box."""
    name: str = "custom"
    box_min: List[float] = Field(default_factory=lambda: [-1.0, -1.0, -1.0])
    box_max: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0])
    primitives: List[ScenePrimitive] = Field(default_factory=list)
    sky_color: List[float] = Field(default_factory=lambda: [0.62, 0.78, 0.95])
    light_dir: List[float] = Field(default_factory=lambda: [0.3, 0.5, 1.0])
    ambient: float = 0.1

    @property
    def extent(self) -> float:
        return float(max(b - a for a, b in zip(self.box_min, self.box_max)))


class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics (OpenCV convention)."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int


class CameraFrame(BaseModel):
    """One image of the rig: vehicle pose index, camera name and camera-to-world matrix."""
    frame_id: str
    pose_index: int
    camera: str
    c2w: List[List[float]]

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.c2w, dtype=np.float64)


class CameraRig(BaseModel):
    intrinsics: CameraIntrinsics
    frames: List[CameraFrame] = Field(default_factory=list)
    step: float = 0.05
    overlap: Optional[float] = None
    overlap_per_camera: Dict[str, float] = Field(default_factory=dict)


@dataclass
class GroundTruthFrame:
    """Rendered supervision for one camera frame."""
    rgb: np.ndarray        # [H, W, 3] float in [0, 1]
    normal: np.ndarray     # [H, W, 3] unit where hit, zero on sky
    depth: np.ndarray      # [H, W] ray distance, inf on sky
    semantic: np.ndarray   # [H, W] uint8 label ids
    sky: np.ndarray        # [H, W] bool


@dataclass
class LidarCloud:
    points: np.ndarray     # [N, 3]
    labels: np.ndarray     # [N] label ids

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class SyntheticScene:
    """Everything generated for one scene."""
    spec: SceneSpec
    rig: CameraRig
    frames: List[GroundTruthFrame] = field(default_factory=list)
    lidar: Optional[LidarCloud] = None
