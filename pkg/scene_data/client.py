"""
Synthetic dataset client.

This module generates synthetic scenes, writes them to the dataset
directory layout and loads them back for training and evaluation,
with caching and logging of every disk access.

Layout::

    cameras.json          intrinsics + camera-to-world matrix per frame
    scene.json            scene description (primitives, box, light)
    rgb/NNNN_CAM.png      8-bit color
    normal/NNNN_CAM.bin   float32 grid, 3 channels
    depth/NNNN_CAM.bin    float32 grid, 1 channel (inf on sky)
    semantic/NNNN_CAM.png u8 label ids
    sky/NNNN_CAM.png      0 / 255
    lidar.ply             points with a per-point label property
"""

import logging
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np
from cachetools import LRUCache
from PIL import Image
from tqdm import tqdm

from config import SceneConfig, get_settings
from mesh.models import MeshError
from mesh.ply import read_point_ply, write_point_ply
from scene_data.dataset import TrainingDataset
from scene_data.ground_truth import render_ground_truth
from scene_data.lidar import lidar_pattern, lidar_positions, sample_lidar
from scene_data.models import SEMANTIC_CLASSES, CameraRig, LidarCloud, SceneSpec, SyntheticScene
from scene_data.primitives import build_scene, preset_spec
from scene_data.trajectory import generate_trajectory

logger = logging.getLogger(__name__)

GRID_MAGIC = b"JGRD"
GRID_HEADER = struct.Struct("<4sIII")


class DatasetError(Exception):
    """Raised when a dataset directory is missing or malformed."""
    pass


# ============================================================================
# FLOAT GRIDS
# ============================================================================

def write_float_grid(path: Union[str, Path], grid: np.ndarray) -> Path:
    """16-byte header (magic, width, height, channels) then little-endian float32 rows."""
    grid = np.asarray(grid, dtype="<f4")
    if grid.ndim == 2:
        grid = grid[..., None]
    height, width, channels = grid.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(GRID_HEADER.pack(GRID_MAGIC, width, height, channels))
        fh.write(grid.tobytes())
    return path


def read_float_grid(path: Union[str, Path]) -> np.ndarray:
    """Returns [H, W, C] float32."""
    data = Path(path).read_bytes()
    if len(data) < GRID_HEADER.size:
        raise DatasetError(f"{path}: truncated grid header")
    magic, width, height, channels = GRID_HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise DatasetError(f"{path}: not a float grid (magic {magic!r})")
    expected = GRID_HEADER.size + 4 * width * height * channels
    if len(data) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=GRID_HEADER.size).reshape(height, width, channels).copy()


def _label_comments():
    return [f"label {cls.label} {cls.value}" for cls in SEMANTIC_CLASSES]


class SceneDataClient:
    """
    Client for synthetic scene datasets.

    Handles:
    - Scene generation from presets
    - Writing the dataset layout
    - Loading datasets (cached)
    """

    def __init__(self, cache_size: int = 4):
        self.settings = get_settings()
        self.cache = LRUCache(maxsize=cache_size)
        logger.info(f"SceneDataClient initialized with data root: {self.settings.data_root}")

    def _log_io(self, action: str, path: Path, detail: str = ""):
        """Log disk access for traceability."""
        logger.info(f"Dataset {action}: {path}")
        if detail:
            logger.info(f"  {detail}")

    def _get_cache_key(self, root: Path) -> str:
        cameras = root / "cameras.json"
        stamp = cameras.stat().st_mtime_ns if cameras.exists() else 0
        return f"{root.resolve()}:{stamp}"

    # =========================================================================
    # GENERATION
    # =========================================================================

    def generate(self, config: SceneConfig, spec: Optional[SceneSpec] = None) -> SyntheticScene:
        """Build the scene, the camera rig, the rendered supervision and the LiDAR cloud."""
        spec = spec if spec is not None else preset_spec(config.preset)
        scene = build_scene(spec)
        rig = generate_trajectory(config)
        frames = [
            render_ground_truth(scene, rig.intrinsics, frame)
            for frame in tqdm(rig.frames, desc="render", disable=not self.settings.progress)
        ]
        positions = lidar_positions(rig, config)
        lidar = sample_lidar(scene, positions, lidar_pattern(config.lidar_beams, config.lidar_azimuths))
        logger.info(f"Generated scene '{spec.name}': {len(frames)} frames, {len(lidar)} LiDAR points")
        return SyntheticScene(spec=spec, rig=rig, frames=frames, lidar=lidar)

    def generate_dataset(self, config: SceneConfig, out_dir: Union[str, Path]) -> SyntheticScene:
        scene = self.generate(config)
        self.write(scene, out_dir)
        return scene

    # =========================================================================
    # WRITE / LOAD
    # =========================================================================

    def write(self, scene: SyntheticScene, out_dir: Union[str, Path]) -> Path:
        root = Path(out_dir)
        for sub in ("rgb", "normal", "depth", "semantic", "sky"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        (root / "scene.json").write_text(scene.spec.model_dump_json(indent=2))
        for frame, gt in zip(scene.rig.frames, scene.frames):
            name = frame.frame_id
            rgb = np.round(np.clip(gt.rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
            Image.fromarray(rgb).save(root / "rgb" / f"{name}.png")
            write_float_grid(root / "normal" / f"{name}.bin", gt.normal)
            write_float_grid(root / "depth" / f"{name}.bin", gt.depth)
            Image.fromarray(gt.semantic.astype(np.uint8)).save(root / "semantic" / f"{name}.png")
            Image.fromarray(gt.sky.astype(np.uint8) * 255).save(root / "sky" / f"{name}.png")
        if scene.lidar is not None:
            write_point_ply(root / "lidar.ply", scene.lidar.points, labels=scene.lidar.labels,
                            comments=_label_comments())
        # written last: its mtime keys the load cache
        (root / "cameras.json").write_text(scene.rig.model_dump_json(indent=2))
        self._log_io("write", root, f"{len(scene.frames)} frames")
        return root

    def _read_png(self, path: Path) -> np.ndarray:
        if not path.exists():
            raise DatasetError(f"missing image: {path}")
        with Image.open(path) as image:
            return np.array(image)

    def load(self, root: Union[str, Path]) -> TrainingDataset:
        """
        Load a dataset directory.

        Raises:
            DatasetError: If the directory or any file is missing or malformed
        """
        root = Path(root)
        if not root.is_dir():
            raise DatasetError(f"dataset directory not found: {root}")
        if not (root / "cameras.json").exists() or not (root / "scene.json").exists():
            raise DatasetError(f"dataset directory incomplete (cameras.json / scene.json): {root}")

        cache_key = self._get_cache_key(root)
        if cache_key in self.cache:
            logger.info(f"Cache hit for: {root}")
            return self.cache[cache_key]

        try:
            rig = CameraRig.model_validate_json((root / "cameras.json").read_text())
            spec = SceneSpec.model_validate_json((root / "scene.json").read_text())
        except ValueError as e:
            raise DatasetError(f"{root}: malformed metadata: {e}")

        rgb, normal, depth, semantic, sky = [], [], [], [], []
        for frame in rig.frames:
            name = frame.frame_id
            rgb.append(self._read_png(root / "rgb" / f"{name}.png").astype(np.float32) / 255.0)
            semantic.append(self._read_png(root / "semantic" / f"{name}.png").astype(np.int64))
            sky.append(self._read_png(root / "sky" / f"{name}.png") > 127)
            for grids, sub in ((normal, "normal"), (depth, "depth")):
                path = root / sub / f"{name}.bin"
                if not path.exists():
                    raise DatasetError(f"missing grid: {path}")
                grids.append(read_float_grid(path))

        lidar = self.load_lidar(root / "lidar.ply") if (root / "lidar.ply").exists() else None

        dataset = TrainingDataset(
            spec=spec,
            rig=rig,
            rgb=np.stack(rgb),
            normal=np.stack(normal),
            depth=np.stack(depth)[..., 0],
            semantic=np.stack(semantic),
            sky=np.stack(sky),
            lidar=lidar,
            root=root,
        )
        self.cache[cache_key] = dataset
        self._log_io("load", root, f"{dataset.num_frames} frames of {dataset.width}x{dataset.height}")
        return dataset

    def load_lidar(self, path: Union[str, Path]) -> LidarCloud:
        path = Path(path)
        if not path.exists():
            raise DatasetError(f"LiDAR file not found: {path}")
        try:
            points, labels, _ = read_point_ply(path)
        except MeshError as e:
            raise DatasetError(str(e))
        self._log_io("load", path, f"{points.shape[0]} points")
        return LidarCloud(points=points, labels=labels if labels is not None else np.zeros(len(points), np.int64))

    def describe(self, root: Union[str, Path]) -> dict:
        """Short summary of a dataset for logs and reports."""
        dataset = self.load(root)
        return {
            "root": str(dataset.root),
            "scene": dataset.spec.name,
            "frames": dataset.num_frames,
            "resolution": [dataset.width, dataset.height],
            "overlap": dataset.rig.overlap,
            "sky_fraction": float(dataset.sky.mean()),
            "lidar_points": 0 if dataset.lidar is None else len(dataset.lidar),
            "extent": dataset.extent,
        }

