"""
Fields Package - hash-grid encodings and the trainable implicit fields.
"""

from fields.encoding import HashGridEncoding, SHEncoding
from fields.networks import (
    FieldBundle, FieldError, FieldMlp, ProposalField, SdfField, SkyHead,
    VolumetricField, VolumetricOutputs, normalize_directions, spatial_gradient,
)

__all__ = [
    "HashGridEncoding", "SHEncoding",
    "FieldBundle", "FieldError", "FieldMlp", "ProposalField", "SdfField", "SkyHead",
    "VolumetricField", "VolumetricOutputs", "normalize_directions", "spatial_gradient",
]
