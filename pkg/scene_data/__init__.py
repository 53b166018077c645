"""
Scene Data Package - synthetic ground-truth scenes and dataset I/O.
"""

from scene_data.client import DatasetError, SceneDataClient, read_float_grid, write_float_grid
from scene_data.dataset import TrainingDataset
from scene_data.ground_truth import render_ground_truth, shade_lambertian, sphere_trace
from scene_data.lidar import lidar_pattern, lidar_positions, project_to_surface, sample_lidar
from scene_data.models import (
    SEMANTIC_CLASSES, SKY_LABEL, CameraFrame, CameraIntrinsics, CameraRig, GroundTruthFrame,
    LidarCloud, PrimitiveKind, ScenePrimitive, SceneSpec, SemanticClass, SyntheticScene,
)
from scene_data.primitives import (
    MINI_STREET, SceneSdf, SceneSpecError, build_scene, preset_spec, primitive_sdf,
)
from scene_data.trajectory import generate_trajectory, intrinsics_for, look_along, measure_overlap

__all__ = [
    "DatasetError", "SceneDataClient", "read_float_grid", "write_float_grid",
    "TrainingDataset",
    "render_ground_truth", "shade_lambertian", "sphere_trace",
    "lidar_pattern", "lidar_positions", "project_to_surface", "sample_lidar",
    "SEMANTIC_CLASSES", "SKY_LABEL", "CameraFrame", "CameraIntrinsics", "CameraRig",
    "GroundTruthFrame", "LidarCloud", "PrimitiveKind", "ScenePrimitive", "SceneSpec",
    "SemanticClass", "SyntheticScene",
    "MINI_STREET", "SceneSdf", "SceneSpecError", "build_scene", "preset_spec", "primitive_sdf",
    "generate_trajectory", "intrinsics_for", "look_along", "measure_overlap",
]
