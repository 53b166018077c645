"""Shared fixtures: small field configs, a tiny synthetic dataset and simple meshes."""

import numpy as np
import pytest
import torch

from config import FieldConfig, RunConfig, SceneConfig
from mesh.models import SceneMesh
from scene_data import SceneDataClient, TrainingDataset


@pytest.fixture
def small_field_config() -> FieldConfig:
    return FieldConfig(
        levels=4,
        coarsest_res=4,
        finest_res=32,
        log2_table_size=12,
        hidden_units=32,
        proposal_levels=2,
        proposal_finest_res=16,
        proposal_log2_table_size=10,
        proposal_hidden_units=8,
        sky_hidden_units=8,
    )


@pytest.fixture
def unit_box():
    return torch.tensor([-1.0, -1.0, -1.0]), torch.tensor([1.0, 1.0, 1.0])


@pytest.fixture(scope="session")
def tiny_scene_config() -> SceneConfig:
    return SceneConfig(frames=4, width=24, height=18, cameras=["front", "left"],
                       lidar_beams=4, lidar_azimuths=60, lidar_every=2)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_scene_config) -> TrainingDataset:
    root = tmp_path_factory.mktemp("tiny_scene")
    client = SceneDataClient()
    client.generate_dataset(tiny_scene_config, root)
    return client.load(root)


@pytest.fixture
def tiny_run_config(small_field_config) -> RunConfig:
    """A run document small enough for CPU smoke tests."""
    return RunConfig.model_validate({
        "field": small_field_config.model_dump(),
        "sampling": {
            "proposal0_samples": 16, "proposal1_samples": 12, "volumetric_samples": 8,
            "sdf_samples": 8, "refine_sdf_coarse_samples": 8, "refine_sdf_fine_samples": 6,
        },
        "mesh": {"resolution": 24, "chunk_points": 32768},
        "train": {"epochs": 2, "rays_per_batch": 256, "steps_per_epoch": 4, "patch_size": 4,
                  "patch_fraction": 0.25, "seed": 3},
        "render": {"chunk_rays": 512},
    })


def square_mesh(z: float = 0.0, half: float = 1.0) -> SceneMesh:
    """Two triangles covering [-half, half]^2 at height z, normal +z."""
    vertices = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    return SceneMesh(vertices=vertices, triangles=triangles)


@pytest.fixture
def ground_mesh() -> SceneMesh:
    return square_mesh()
