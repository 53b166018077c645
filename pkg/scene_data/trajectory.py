"""
Camera rig along a straight vehicle path, and the consecutive-frame view
overlap measurement.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import SceneConfig
from scene_data.models import CameraFrame, CameraIntrinsics, CameraRig
from scene_data.primitives import SceneSpecError

logger = logging.getLogger(__name__)

WORLD_UP = np.array([0.0, 0.0, 1.0])
PATH_START_X = -0.6


def camera_yaws(config: SceneConfig) -> Dict[str, float]:
    """Yaw (degrees about +z, relative to the driving direction) of every configured camera."""
    known = {"front": 0.0, "left": config.side_yaw_deg, "right": -config.side_yaw_deg}
    unknown = [name for name in config.cameras if name not in known]
    if unknown:
        raise SceneSpecError(f"unknown camera name(s): {', '.join(unknown)}")
    return {name: known[name] for name in config.cameras}


def intrinsics_for(config: SceneConfig) -> CameraIntrinsics:
    focal = 0.5 * config.width / math.tan(math.radians(config.fov_deg) / 2.0)
    return CameraIntrinsics(fx=focal, fy=focal, cx=0.5 * config.width, cy=0.5 * config.height,
                            width=config.width, height=config.height)


def look_along(position: np.ndarray, forward: np.ndarray) -> np.ndarray:
    """OpenCV camera-to-world (x right, y down, z forward) for a level camera."""
    z_axis = forward / np.linalg.norm(forward)
    x_axis = np.cross(z_axis, WORLD_UP)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    c2w = np.eye(4)
    c2w[:3, 0] = x_axis
    c2w[:3, 1] = y_axis
    c2w[:3, 2] = z_axis
    c2w[:3, 3] = position
    return c2w


def generate_trajectory(config: SceneConfig, start: Optional[Sequence[float]] = None,
                        measure: bool = True, overlap_depth: float = 2.0) -> CameraRig:
    """
    Straight path along +x with a fixed step; every pose carries the
    forward camera and the side cameras yawed by +/- ``side_yaw_deg``.
    """
    if config.frames < 2:
        raise SceneSpecError("a trajectory needs at least 2 frames")
    yaws = camera_yaws(config)
    origin = np.array(start if start is not None else (PATH_START_X, 0.0, config.camera_height), dtype=np.float64)
    direction = np.array([1.0, 0.0, 0.0])
    frames: List[CameraFrame] = []
    for index in range(config.frames):
        position = origin + index * config.step * direction
        for camera, yaw in yaws.items():
            angle = math.radians(yaw)
            forward = np.array([math.cos(angle), math.sin(angle), 0.0])
            frames.append(CameraFrame(
                frame_id=f"{index:04d}_{camera}",
                pose_index=index,
                camera=camera,
                c2w=look_along(position, forward).tolist(),
            ))
    rig = CameraRig(intrinsics=intrinsics_for(config), frames=frames, step=config.step)
    if measure:
        rig.overlap_per_camera = measure_overlap(rig, far=overlap_depth, seed=config.seed)
        rig.overlap = float(np.mean(list(rig.overlap_per_camera.values())))
        logger.info(f"Trajectory: {config.frames} poses x {len(yaws)} cameras, "
                    f"step {config.step}, mean overlap {rig.overlap:.3f}")
    return rig


def _frustum_samples(intrinsics: CameraIntrinsics, near: float, far: float,
                     count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, intrinsics.width, count)
    v = rng.uniform(0.0, intrinsics.height, count)
    depth = rng.uniform(near, far, count)
    return np.stack([(u - intrinsics.cx) / intrinsics.fx * depth,
                     (v - intrinsics.cy) / intrinsics.fy * depth,
                     depth], axis=-1)


def _visible(points_world: np.ndarray, c2w: np.ndarray, intrinsics: CameraIntrinsics,
             near: float, far: float) -> np.ndarray:
    local = (points_world - c2w[:3, 3]) @ c2w[:3, :3]
    z = local[:, 2]
    in_depth = (z >= near) & (z <= far)
    safe_z = np.where(z > 0, z, 1.0)
    u = intrinsics.fx * local[:, 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * local[:, 1] / safe_z + intrinsics.cy
    return in_depth & (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)


def measure_overlap(rig: CameraRig, near: float = 0.05, far: float = 2.0,
                    samples: int = 4096, seed: int = 0) -> Dict[str, float]:
    """
    Mean fraction of frame i's frustum (sampled with a fixed seed) that
    frame i+1 of the same camera also sees, per camera.
    """
    by_camera: Dict[str, List[Tuple[int, np.ndarray]]] = {}
    for frame in rig.frames:
        by_camera.setdefault(frame.camera, []).append((frame.pose_index, frame.matrix))
    local = _frustum_samples(rig.intrinsics, near, far, samples, seed)
    overlap: Dict[str, float] = {}
    for camera, poses in by_camera.items():
        poses.sort(key=lambda item: item[0])
        fractions = []
        for (_, first), (_, second) in zip(poses[:-1], poses[1:]):
            world = local @ first[:3, :3].T + first[:3, 3]
            fractions.append(float(_visible(world, second, rig.intrinsics, near, far).mean()))
        overlap[camera] = float(np.mean(fractions)) if fractions else 1.0
    return overlap
