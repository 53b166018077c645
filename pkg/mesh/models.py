"""
Data model for extracted meshes.
"""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from mesh.bvh import Bvh

logger = logging.getLogger(__name__)


class MeshError(Exception):
    """Raised for malformed meshes or unreadable mesh files."""
    pass


class SceneMesh(BaseModel):
    """Indexed triangle mesh with per-vertex colors in [0, 1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    vertices: np.ndarray = Field(default_factory=lambda: np.zeros((0, 3)))
    triangles: np.ndarray = Field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    colors: Optional[np.ndarray] = None

    _bvh: Optional[Bvh] = PrivateAttr(default=None)

    @field_validator("vertices", mode="before")
    @classmethod
    def _as_vertices(cls, value):
        return np.asarray(value, dtype=np.float64).reshape(-1, 3)

    @field_validator("triangles", mode="before")
    @classmethod
    def _as_triangles(cls, value):
        return np.asarray(value, dtype=np.int64).reshape(-1, 3)

    @field_validator("colors", mode="before")
    @classmethod
    def _as_colors(cls, value):
        if value is None:
            return None
        return np.clip(np.asarray(value, dtype=np.float64).reshape(-1, 3), 0.0, 1.0)

    @model_validator(mode="after")
    def _check_indices(self) -> "SceneMesh":
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle index out of range")
        if self.colors is not None and len(self.colors) != len(self.vertices):
            raise MeshError("colors must have one row per vertex")
        return self

    @property
    def is_empty(self) -> bool:
        return self.triangles.shape[0] == 0

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def bvh(self) -> Bvh:
        """Lazily built acceleration structure."""
        if self._bvh is None:
            self._bvh = Bvh(self.vertices, self.triangles)
        return self._bvh

    def triangle_areas(self) -> np.ndarray:
        corners = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(
            np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=-1
        )

    def triangle_normals(self) -> np.ndarray:
        corners = self.vertices[self.triangles]
        n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-30)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals (unit length; zero for isolated vertices)."""
        corners = self.vertices[self.triangles]
        face = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        normals = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(normals, self.triangles[:, k], face)
        norm = np.linalg.norm(normals, axis=-1, keepdims=True)
        return np.where(norm > 1e-30, normals / np.maximum(norm, 1e-30), 0.0)

    def with_colors(self, colors: np.ndarray) -> "SceneMesh":
        return SceneMesh(vertices=self.vertices, triangles=self.triangles, colors=colors)
