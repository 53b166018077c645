"""
Binary little-endian PLY reading and writing.

Meshes are written as vertex x,y,z float32 + red,green,blue uchar and
faces as ``list uchar uint vertex_indices``. Point clouds use the same
vertex layout with optional color and label properties.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from mesh.models import MeshError, SceneMesh

logger = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def colors_to_uchar(colors: np.ndarray) -> np.ndarray:
    return np.round(np.clip(colors, 0.0, 1.0) * 255.0).astype(np.uint8)


def _header(elements: List[Tuple[str, int, List[str]]], comments: Sequence[str]) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    for name, count, props in elements:
        lines.append(f"element {name} {count}")
        lines += props
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_mesh_ply(mesh: SceneMesh, path: Union[str, Path], comments: Sequence[str] = ()) -> Path:
    """Write a colored triangle mesh. Vertices without colors are written white."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vertex_dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                             ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    vertex = np.empty(mesh.num_vertices, dtype=vertex_dtype)
    vertex["x"], vertex["y"], vertex["z"] = mesh.vertices.astype(np.float32).T
    rgb = colors_to_uchar(mesh.colors) if mesh.colors is not None else np.full((mesh.num_vertices, 3), 255, np.uint8)
    vertex["red"], vertex["green"], vertex["blue"] = rgb.T

    face_dtype = np.dtype([("n", "u1"), ("idx", "<u4", (3,))])
    face = np.empty(mesh.num_triangles, dtype=face_dtype)
    face["n"] = 3
    face["idx"] = mesh.triangles.astype(np.uint32)

    header = _header(
        [
            ("vertex", mesh.num_vertices, ["property float x", "property float y", "property float z",
                                            "property uchar red", "property uchar green", "property uchar blue"]),
            ("face", mesh.num_triangles, ["property list uchar uint vertex_indices"]),
        ],
        comments,
    )
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(vertex.tobytes())
        fh.write(face.tobytes())
    logger.info(f"Wrote mesh PLY {path} ({mesh.num_vertices} vertices, {mesh.num_triangles} faces)")
    return path


def write_point_ply(
    path: Union[str, Path],
    points: np.ndarray,
    colors: Optional[np.ndarray] = None,
    labels: Optional[np.ndarray] = None,
    comments: Sequence[str] = (),
) -> Path:
    """Write a point cloud; ``colors`` are uchar triples or floats in [0, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    props = ["property float x", "property float y", "property float z"]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        props += ["property uchar red", "property uchar green", "property uchar blue"]
    if labels is not None:
        fields += [("label", "u1")]
        props += ["property uchar label"]
    vertex = np.empty(points.shape[0], dtype=np.dtype(fields))
    vertex["x"], vertex["y"], vertex["z"] = points.astype(np.float32).T
    if colors is not None:
        colors = np.asarray(colors)
        rgb = colors.astype(np.uint8) if colors.dtype == np.uint8 else colors_to_uchar(colors)
        vertex["red"], vertex["green"], vertex["blue"] = rgb.reshape(-1, 3).T
    if labels is not None:
        vertex["label"] = np.asarray(labels, dtype=np.uint8)
    with path.open("wb") as fh:
        fh.write(_header([("vertex", points.shape[0], props)], comments))
        fh.write(vertex.tobytes())
    logger.info(f"Wrote point PLY {path} ({points.shape[0]} points)")
    return path


def read_ply(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], List[str]]:
    """
    Parse a binary little-endian PLY.

    Returns:
        (element name -> structured array, header comments). Face lists are
        returned as an int64 array [F, 3] under ``"face"``.

    Raises:
        MeshError: unsupported format, non-triangle faces or truncated data
    """
    path = Path(path)
    if not path.exists():
        raise MeshError(f"PLY file not found: {path}")
    data = path.read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise MeshError(f"{path} is not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]

    comments: List[str] = []
    elements: List[Tuple[str, int, list]] = []
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "binary_little_endian":
            raise MeshError(f"unsupported PLY format '{parts[1]}'")
        elif parts[0] == "comment":
            comments.append(line[len("comment "):])
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            elements[-1][2].append(parts[1:])

    result: Dict[str, np.ndarray] = {}
    offset = 0
    for name, count, props in elements:
        if props and props[0][0] == "list":
            _, count_type, index_type, _ = props[0]
            dtype = np.dtype([("n", _PLY_TYPES[count_type]), ("idx", _PLY_TYPES[index_type], (3,))])
            size = dtype.itemsize * count
            if len(body) < offset + size:
                raise MeshError(f"{path}: truncated '{name}' element")
            faces = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            if count and not np.all(faces["n"] == 3):
                raise MeshError(f"{path}: only triangle faces are supported")
            result[name] = faces["idx"].astype(np.int64).reshape(-1, 3)
        else:
            dtype = np.dtype([(p[1], _PLY_TYPES[p[0]]) for p in props])
            size = dtype.itemsize * count
            if len(body) < offset + size:
                raise MeshError(f"{path}: truncated '{name}' element")
            result[name] = np.frombuffer(body, dtype=dtype, count=count, offset=offset).copy()
        offset += size
    return result, comments


def read_mesh_ply(path: Union[str, Path]) -> SceneMesh:
    elements, _ = read_ply(path)
    vertex = elements.get("vertex")
    if vertex is None:
        raise MeshError(f"{path}: no vertex element")
    vertices = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=-1).astype(np.float64)
    colors = None
    if vertex.dtype.names and "red" in vertex.dtype.names:
        colors = np.stack([vertex["red"], vertex["green"], vertex["blue"]], axis=-1) / 255.0
    triangles = elements.get("face", np.zeros((0, 3), dtype=np.int64))
    return SceneMesh(vertices=vertices, triangles=triangles, colors=colors)


def read_point_ply(path: Union[str, Path]) -> Tuple[np.ndarray, Optional[np.ndarray], List[str]]:
    """Returns (points [N, 3] float64, labels or None, header comments)."""
    elements, comments = read_ply(path)
    vertex = elements.get("vertex")
    if vertex is None:
        raise MeshError(f"{path}: no vertex element")
    points = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=-1).astype(np.float64)
    labels = vertex["label"].astype(np.int64) if "label" in vertex.dtype.names else None
    return points, labels, comments
