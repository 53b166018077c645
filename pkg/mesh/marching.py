"""
Zero-level-set extraction and vertex colorization.

The SDF is sampled on a (resolution + 1)^3 lattice spanning the scene box in
float64, polygonized with PyMCubes and cleaned of degenerate triangles.
Winding is chosen so that face normals agree with the SDF gradient.
"""

import logging
from typing import Callable, Sequence, Union

import mcubes
import numpy as np
import torch

from fields.networks import SdfField
from mesh.models import MeshError, SceneMesh

logger = logging.getLogger(__name__)

SdfFunction = Callable[[torch.Tensor], torch.Tensor]


def _as_sdf_function(field: Union[SdfField, SdfFunction]) -> SdfFunction:
    if isinstance(field, SdfField):
        return field.signed_distance
    return field


def sample_sdf_grid(
    field: Union[SdfField, SdfFunction],
    resolution: int,
    box_min: Sequence[float],
    box_max: Sequence[float],
    chunk_points: int = 262144,
) -> np.ndarray:
    """SDF values on the (resolution + 1)^3 lattice, float64, indexed [x, y, z]."""
    fn = _as_sdf_function(field)
    box_min = np.asarray(box_min, dtype=np.float64)
    box_max = np.asarray(box_max, dtype=np.float64)
    axes = [np.linspace(box_min[a], box_max[a], resolution + 1) for a in range(3)]
    yy, zz = np.meshgrid(axes[1], axes[2], indexing="ij")
    plane = np.stack([yy.ravel(), zz.ravel()], axis=-1)
    slab = max(1, chunk_points // plane.shape[0])

    dtype = torch.float64
    if isinstance(field, torch.nn.Module):
        dtype = next(field.parameters()).dtype

    values = np.empty((resolution + 1,) * 3, dtype=np.float64)
    with torch.no_grad():
        for i0 in range(0, resolution + 1, slab):
            xs = axes[0][i0:i0 + slab]
            pts = np.concatenate(
                [np.concatenate([np.full((plane.shape[0], 1), x), plane], axis=-1) for x in xs], axis=0
            )
            out = fn(torch.from_numpy(pts).to(dtype))
            values[i0:i0 + len(xs)] = out.detach().double().cpu().numpy().reshape(len(xs), resolution + 1, resolution + 1)
    return values


def _orient_outward(vertices: np.ndarray, triangles: np.ndarray, values: np.ndarray,
                    box_min: np.ndarray, cell: np.ndarray) -> np.ndarray:
    """Flip the winding when face normals point against the lattice SDF gradient."""
    if triangles.shape[0] == 0:
        return triangles
    grads = np.stack(np.gradient(values, *cell), axis=-1)
    corners = vertices[triangles]
    centroids = corners.mean(axis=1)
    idx = np.clip(np.rint((centroids - box_min) / cell).astype(np.int64), 0, np.array(values.shape) - 1)
    g = grads[idx[:, 0], idx[:, 1], idx[:, 2]]
    face = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    if np.sum(np.einsum("ij,ij->i", face, g)) < 0.0:
        return triangles[:, [0, 2, 1]]
    return triangles


def _clean(vertices: np.ndarray, triangles: np.ndarray, min_area: float = 1e-12):
    corners = vertices[triangles]
    areas = 0.5 * np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=-1)
    keep = areas >= min_area
    removed = int((~keep).sum())
    triangles = triangles[keep]
    used = np.unique(triangles)
    remap = np.full(vertices.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.shape[0])
    return vertices[used], remap[triangles], removed


def extract_mesh(
    field: Union[SdfField, SdfFunction],
    resolution: int,
    box_min: Sequence[float],
    box_max: Sequence[float],
    chunk_points: int = 262144,
) -> SceneMesh:
    """
    Polygonize {x : f(x) = 0} inside the box.

    Args:
        field: SdfField or callable mapping points [N, 3] to distances [N]
        resolution: cells per axis (>= 8)
        box_min, box_max: scene box corners
        chunk_points: field evaluation batch size

    Returns:
        SceneMesh, empty when the field never changes sign
    """
    if resolution < 8:
        raise MeshError(f"resolution must be >= 8, got {resolution}")
    box_min = np.asarray(box_min, dtype=np.float64)
    box_max = np.asarray(box_max, dtype=np.float64)
    values = sample_sdf_grid(field, resolution, box_min, box_max, chunk_points)
    if values.min() > 0.0 or values.max() < 0.0:
        logger.warning(f"No zero crossing at resolution {resolution}; mesh is empty")
        return SceneMesh()

    # mcubes treats values above the isovalue as inside
    vertices, triangles = mcubes.marching_cubes(-values, 0.0)
    cell = (box_max - box_min) / resolution
    vertices = box_min + np.asarray(vertices, dtype=np.float64) * cell
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)

    vertices, triangles, removed = _clean(vertices, triangles)
    triangles = _orient_outward(vertices, triangles, values, box_min, cell)
    logger.info(
        f"Extracted mesh at {resolution}^3: {len(vertices)} vertices, {len(triangles)} triangles "
        f"({removed} degenerate removed)"
    )
    return SceneMesh(vertices=vertices, triangles=triangles)


def colorize_mesh(mesh: SceneMesh, field: SdfField, chunk_points: int = 65536) -> SceneMesh:
    """Vertex color = SDF color head at the vertex, viewed along the inward normal."""
    if mesh.is_empty:
        raise MeshError("cannot colorize an empty mesh")
    normals = mesh.vertex_normals()
    directions = -normals
    zero = np.linalg.norm(directions, axis=-1) < 1e-12
    directions[zero] = np.array([0.0, 0.0, -1.0])
    dtype = next(field.parameters()).dtype

    colors = []
    with torch.no_grad():
        for i0 in range(0, mesh.num_vertices, chunk_points):
            x = torch.from_numpy(mesh.vertices[i0:i0 + chunk_points]).to(dtype)
            d = torch.from_numpy(directions[i0:i0 + chunk_points]).to(dtype)
            colors.append(field.color(x, d).double().cpu().numpy())
    return mesh.with_colors(np.concatenate(colors, axis=0))
