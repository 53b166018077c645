"""
Geometric accuracy statistics: point-to-mesh distance and precision.

All distances are exact point-to-triangle minima from the mesh BVH.
"""

import logging
from typing import Dict, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from mesh.models import SceneMesh
from mesh.queries import point_mesh_distance
from scene_data.models import LidarCloud, SemanticClass

logger = logging.getLogger(__name__)

PointsLike = Union[LidarCloud, np.ndarray]


class MetricsError(Exception):
    """Raised when metrics cannot be computed from the given inputs."""
    pass


class ClassStats(BaseModel):
    count: int
    mean_distance: float
    precision: float


class GeoReport(BaseModel):
    """Point-to-mesh summary; ``distances`` are kept for export but not serialized."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    valid: bool = True
    num_points: int = 0
    mean_distance: float = 0.0
    threshold: float = 0.0
    precision: float = 0.0
    per_class: Dict[str, ClassStats] = Field(default_factory=dict)
    distances: Optional[np.ndarray] = Field(default=None, exclude=True)


def _split_points(points: PointsLike):
    if isinstance(points, LidarCloud):
        return np.asarray(points.points, dtype=np.float64).reshape(-1, 3), np.asarray(points.labels)
    return np.asarray(points, dtype=np.float64).reshape(-1, 3), None


def _check_threshold(threshold: float):
    if not threshold > 0.0:
        raise MetricsError(f"precision threshold must be positive, got {threshold}")


def precision_from_distances(distances: np.ndarray, threshold: float) -> float:
    """Fraction of distances strictly below ``threshold``."""
    _check_threshold(threshold)
    if distances.size == 0:
        return 0.0
    return float(np.count_nonzero(distances < threshold)) / float(distances.size)


def point_to_mesh(points: PointsLike, mesh: SceneMesh, threshold: float) -> GeoReport:
    """
    Distance from every ground-truth point to the mesh, with the mean,
    precision at ``threshold`` and a per-class breakdown when labels exist.

    An empty mesh yields infinite distances and an invalid report.
    """
    _check_threshold(threshold)
    xyz, labels = _split_points(points)
    if xyz.shape[0] == 0:
        raise MetricsError("no ground-truth points to evaluate")

    if mesh.is_empty:
        logger.warning("Point-to-mesh on an empty mesh: report flagged invalid")
        distances = np.full(xyz.shape[0], np.inf)
    else:
        distances = point_mesh_distance(mesh, xyz)

    per_class: Dict[str, ClassStats] = {}
    if labels is not None and labels.size == distances.size:
        for label in np.unique(labels):
            selected = distances[labels == label]
            try:
                name = SemanticClass.from_label(int(label)).value
            except IndexError:
                name = f"class_{int(label)}"
            per_class[name] = ClassStats(
                count=int(selected.size),
                mean_distance=float(selected.mean()),
                precision=precision_from_distances(selected, threshold),
            )

    report = GeoReport(
        valid=not mesh.is_empty,
        num_points=int(xyz.shape[0]),
        mean_distance=float(distances.mean()),
        threshold=threshold,
        precision=precision_from_distances(distances, threshold),
        per_class=per_class,
        distances=distances,
    )
    logger.info(f"P->M: mean {report.mean_distance:.5f}, precision@{threshold:.4f} {report.precision:.3f} "
                f"over {report.num_points} points")
    return report


def precision(points: PointsLike, mesh: SceneMesh, threshold: float) -> float:
    """Fraction of points closer than ``threshold`` to the mesh."""
    _check_threshold(threshold)
    xyz, _ = _split_points(points)
    if xyz.shape[0] == 0:
        raise MetricsError("no ground-truth points to evaluate")
    if mesh.is_empty:
        return 0.0
    return precision_from_distances(point_mesh_distance(mesh, xyz), threshold)
