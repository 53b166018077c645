"""
Ray and point queries against a SceneMesh through its BVH.
"""

from typing import Tuple

import numpy as np

from mesh.models import SceneMesh


def ray_mesh_depth(mesh: SceneMesh, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Distance along each ray to the first triangle hit, inf for MISS."""
    return mesh.bvh.intersect(origins, directions)[0]


def ray_mesh_hits(mesh: SceneMesh, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(distance, triangle id, hit-leaf entry distance) per ray."""
    return mesh.bvh.intersect(origins, directions)


def point_mesh_distance(mesh: SceneMesh, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the closest triangle, inf on an empty mesh."""
    return mesh.bvh.closest(points)[0]
