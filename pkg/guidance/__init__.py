"""
Guidance Package - uncertainty estimation and guided ray sampling.
"""

from guidance.sampling import (
    Branch, SamplingBounds, ShellSchedule, edges_from_samples, full_bounds, merge_samples,
    pdf_sample, sdf_grs_bounds, shell_update, uniform_edges, volumetric_grs_bounds,
)
from guidance.uncertainty import (
    UNCERTAIN, ThresholdPolicy, UncertaintyRecord, UncertaintyTracker, certainty_indicator,
    geometric_uncertainty, photometric_from_colors, photometric_uncertainty, update_threshold,
    update_threshold_from_hits,
)

__all__ = [
    "Branch", "SamplingBounds", "ShellSchedule", "edges_from_samples", "full_bounds",
    "merge_samples", "pdf_sample", "sdf_grs_bounds", "shell_update", "uniform_edges",
    "volumetric_grs_bounds",
    "UNCERTAIN", "ThresholdPolicy", "UncertaintyRecord", "UncertaintyTracker",
    "certainty_indicator", "geometric_uncertainty", "photometric_from_colors",
    "photometric_uncertainty", "update_threshold", "update_threshold_from_hits",
]
