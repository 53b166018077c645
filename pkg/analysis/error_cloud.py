"""
Point clouds colored by point-to-mesh error.
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np
from matplotlib import colormaps

from mesh.ply import write_point_ply

logger = logging.getLogger(__name__)

ERROR_COLORMAP = "viridis"


def error_colors(distances: np.ndarray, ramp_max: float) -> np.ndarray:
    """Purple (zero error) to yellow (``ramp_max`` and beyond), floats in [0, 1], [N, 3]."""
    if not ramp_max > 0.0:
        raise ValueError(f"ramp_max must be positive, got {ramp_max}")
    scaled = np.clip(np.nan_to_num(np.asarray(distances, np.float64) / ramp_max, posinf=1.0), 0.0, 1.0)
    return colormaps[ERROR_COLORMAP](scaled)[:, :3]


def export_error_cloud(points: np.ndarray, distances: np.ndarray, path: Union[str, Path],
                       ramp_max: float) -> Path:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    distances = np.asarray(distances, dtype=np.float64).reshape(-1)
    if points.shape[0] != distances.shape[0]:
        raise ValueError("one distance per point required")
    comments = [f"error ramp {ERROR_COLORMAP} 0 to {ramp_max!r}"]
    path = write_point_ply(path, points, colors=error_colors(distances, ramp_max), comments=comments)
    logger.info(f"Error cloud exported to {path}")
    return path
