"""
Analysis Package - geometric and photometric evaluation of reconstructions.
"""

from analysis.error_cloud import error_colors, export_error_cloud
from analysis.photometric import (
    ImageScore, PhotometricReport, compare_image_dirs, image_metrics, psnr, ssim,
)
from analysis.report_builder import EvaluationReport, EvaluationReportBuilder
from analysis.stats import (
    ClassStats, GeoReport, MetricsError, point_to_mesh, precision, precision_from_distances,
)

__all__ = [
    "error_colors", "export_error_cloud",
    "ImageScore", "PhotometricReport", "compare_image_dirs", "image_metrics",
    "psnr", "ssim",
    "EvaluationReport", "EvaluationReportBuilder",
    "ClassStats", "GeoReport", "MetricsError", "point_to_mesh", "precision",
    "precision_from_distances",
]
