"""
Evaluation Report Builder.

Constructs the structured evaluation report from an extracted mesh, the
ground-truth LiDAR cloud and, optionally, rendered and reference images.
"""

import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from analysis.error_cloud import export_error_cloud
from analysis.photometric import PhotometricReport, compare_image_dirs
from analysis.stats import GeoReport, point_to_mesh
from config import MetricsConfig
from mesh.models import SceneMesh
from scene_data.models import LidarCloud

logger = logging.getLogger(__name__)


class EvaluationReport(BaseModel):
    """
    Complete evaluation report.

    Thresholds are stated both as extent fractions and in scene units.
    """
    report_id: str
    extent: float
    threshold: float
    error_ramp_max: float
    mesh_vertices: int
    mesh_triangles: int
    geometry: GeoReport
    photometric: Optional[PhotometricReport] = None
    inputs: Dict[str, str] = Field(default_factory=dict)

    def to_json(self) -> str:
        """Convert report to JSON string."""
        return self.model_dump_json(indent=2)

    def to_dict(self) -> Dict[str, Any]:
        """Convert report to dictionary."""
        return self.model_dump()

    def summary_table(self) -> str:
        """Human-readable summary of the headline numbers."""
        geo = self.geometry
        rows: List[tuple] = [
            ("points", f"{geo.num_points}"),
            ("mesh triangles", f"{self.mesh_triangles}"),
            ("P->M mean", f"{geo.mean_distance:.5f}"),
            (f"precision@{self.threshold:.4f}", f"{geo.precision:.3f}"),
        ]
        for name, stats in sorted(geo.per_class.items()):
            rows.append((f"P->M {name}", f"{stats.mean_distance:.5f} ({stats.count} pts)"))
        if self.photometric is not None:
            rows.append(("PSNR", f"{self.photometric.mean_psnr:.2f} dB"))
            rows.append(("SSIM", f"{self.photometric.mean_ssim:.4f}"))
        if not geo.valid:
            rows.append(("status", "INVALID (empty mesh)"))
        width = max(len(label) for label, _ in rows)
        return "\n".join(f"{label.ljust(width)}  {value}" for label, value in rows)


class EvaluationReportBuilder:
    """
    Builds evaluation reports.

    The builder orchestrates:
    1. Point-to-mesh statistics
    2. Optional image metrics
    3. Optional error-cloud export
    """

    def __init__(self, mesh: SceneMesh, lidar: LidarCloud, extent: float, config: Optional[MetricsConfig] = None):
        self.mesh = mesh
        self.lidar = lidar
        self.extent = extent
        self.config = config or MetricsConfig()
        logger.info("EvaluationReportBuilder initialized")

    @property
    def threshold(self) -> float:
        return self.config.precision_fraction * self.extent

    @property
    def error_ramp_max(self) -> float:
        return self.config.error_ramp_fraction * self.extent

    def _report_id(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.mesh.vertices).tobytes())
        digest.update(np.ascontiguousarray(self.mesh.triangles).tobytes())
        digest.update(np.ascontiguousarray(self.lidar.points).tobytes())
        return f"eval_{digest.hexdigest()[:12]}"

    def build_report(
        self,
        rendered_dir: Optional[Union[str, Path]] = None,
        reference_dir: Optional[Union[str, Path]] = None,
        error_cloud_path: Optional[Union[str, Path]] = None,
        inputs: Optional[Dict[str, str]] = None,
    ) -> EvaluationReport:
        """
        Build the complete evaluation report.

        Returns:
            EvaluationReport with all requested sections populated
        """
        logger.info("=== Building Evaluation Report ===")
        geometry = point_to_mesh(self.lidar, self.mesh, self.threshold)

        photometric = None
        if rendered_dir is not None and reference_dir is not None:
            photometric = compare_image_dirs(rendered_dir, reference_dir, cap=self.config.psnr_cap,
                                             window=self.config.ssim_window, sigma=self.config.ssim_sigma)

        if error_cloud_path is not None:
            export_error_cloud(self.lidar.points, geometry.distances, error_cloud_path, self.error_ramp_max)

        report = EvaluationReport(
            report_id=self._report_id(),
            extent=self.extent,
            threshold=self.threshold,
            error_ramp_max=self.error_ramp_max,
            mesh_vertices=self.mesh.num_vertices,
            mesh_triangles=self.mesh.num_triangles,
            geometry=geometry,
            photometric=photometric,
            inputs=dict(inputs or {}),
        )
        logger.info(f"Report built: {report.report_id}")
        logger.info(f"  Mean P->M: {geometry.mean_distance:.5f}")
        logger.info(f"  Precision: {geometry.precision:.3f}")
        return report
