"""
Joint Radiance/SDF Reconstruction Engine

Reconstructs street-like scenes by training a volumetric radiance field
and a signed distance field side by side, with uncertainty-guided ray
sampling and uncertainty-relaxed regularization between them.
"""

__version__ = "1.0.0"
