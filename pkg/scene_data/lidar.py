"""
LiDAR-like evaluation points: ray casting from trajectory poses with an
elevation/azimuth beam pattern.
"""

import logging
import math
from typing import List

import numpy as np
import torch

from config import SceneConfig
from scene_data.ground_truth import sphere_trace
from scene_data.models import CameraRig, LidarCloud
from scene_data.primitives import SceneSdf

logger = logging.getLogger(__name__)

MIN_ELEVATION_DEG = -30.0
MAX_ELEVATION_DEG = 10.0
PROJECTION_TOL = 1e-9
PROJECTION_ITERS = 8


def lidar_pattern(beams: int, azimuths: int, min_elevation_deg: float = MIN_ELEVATION_DEG,
                  max_elevation_deg: float = MAX_ELEVATION_DEG) -> np.ndarray:
    """Unit directions of a spinning multi-beam sensor, [beams * azimuths, 3]."""
    if beams == 1:
        elevations = np.array([math.radians(0.5 * (min_elevation_deg + max_elevation_deg))])
    else:
        elevations = np.radians(np.linspace(min_elevation_deg, max_elevation_deg, beams))
    azimuth = np.linspace(0.0, 2.0 * math.pi, azimuths, endpoint=False)
    elev, az = np.meshgrid(elevations, azimuth, indexing="ij")
    return np.stack([np.cos(elev) * np.cos(az), np.cos(elev) * np.sin(az), np.sin(elev)], axis=-1).reshape(-1, 3)


def lidar_positions(rig: CameraRig, config: SceneConfig) -> np.ndarray:
    """Sensor origins: every ``lidar_every``-th vehicle pose, raised to ``lidar_height``."""
    positions: List[np.ndarray] = []
    seen = set()
    for frame in rig.frames:
        if frame.pose_index in seen or frame.pose_index % config.lidar_every:
            continue
        seen.add(frame.pose_index)
        position = frame.matrix[:3, 3].copy()
        position[2] = config.lidar_height
        positions.append(position)
    return np.asarray(positions, dtype=np.float64).reshape(-1, 3)


def project_to_surface(scene: SceneSdf, points: torch.Tensor) -> torch.Tensor:
    """Newton steps along the analytic gradient onto the zero level set."""
    for _ in range(PROJECTION_ITERS):
        f = scene.sdf(points)
        if points.shape[0] == 0 or float(f.abs().max()) < PROJECTION_TOL:
            break
        grad = scene.gradient(points)
        points = points - (f / (grad * grad).sum(dim=-1).clamp_min(1e-12))[:, None] * grad
    return points


def sample_lidar(scene: SceneSdf, positions: np.ndarray, directions: np.ndarray) -> LidarCloud:
    """
    Cast every pattern direction from every position; sky rays yield no
    point, so the point count is the ray count minus misses.
    """
    positions = torch.as_tensor(np.asarray(positions, dtype=np.float64)).reshape(-1, 3)
    directions = torch.as_tensor(np.asarray(directions, dtype=np.float64)).reshape(-1, 3)
    origins = positions[:, None, :].expand(-1, directions.shape[0], -1).reshape(-1, 3)
    dirs = directions[None, :, :].expand(positions.shape[0], -1, -1).reshape(-1, 3)
    t, hit = sphere_trace(scene, origins, dirs)
    dirs = dirs / dirs.norm(dim=-1, keepdim=True)
    points = origins[hit] + t[hit, None] * dirs[hit]
    points = project_to_surface(scene, points)
    labels = scene.label(points) if points.shape[0] else torch.zeros(0, dtype=torch.long)
    logger.info(f"LiDAR: {points.shape[0]} points from {origins.shape[0]} rays "
                f"({positions.shape[0]} poses)")
    return LidarCloud(points=points.numpy(), labels=labels.numpy().astype(np.int64))
