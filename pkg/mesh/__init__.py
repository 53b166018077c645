"""
Mesh Package - marching cubes, BVH queries and PLY I/O.
"""

from mesh.bvh import Bvh, closest_point_on_triangle, ray_triangle_watertight
from mesh.marching import colorize_mesh, extract_mesh, sample_sdf_grid
from mesh.models import MeshError, SceneMesh
from mesh.ply import read_mesh_ply, read_ply, read_point_ply, write_mesh_ply, write_point_ply
from mesh.queries import point_mesh_distance, ray_mesh_depth, ray_mesh_hits

__all__ = [
    "Bvh", "closest_point_on_triangle", "ray_triangle_watertight",
    "colorize_mesh", "extract_mesh", "sample_sdf_grid",
    "MeshError", "SceneMesh",
    "read_mesh_ply", "read_ply", "read_point_ply", "write_mesh_ply", "write_point_ply",
    "point_mesh_distance", "ray_mesh_depth", "ray_mesh_hits",
]
