"""Joint training loop, batching, checkpoints and full-frame rendering."""

from training.batches import BatchSampler, RayBatch, derive_seed, step_generator
from training.checkpoint import (
    Checkpoint, CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
)
from training.inference import render_view, to_uint8
from training.rendering import DualRenderer, SdfPass, VolumetricPass, max_weight_points
from training.trainer import (
    Trainer, TrainingAbortedError, TrainingResult, TrainState, parameter_digest, restore_bundle,
)

__all__ = [
    "BatchSampler",
    "RayBatch",
    "derive_seed",
    "step_generator",
    "Checkpoint",
    "CheckpointError",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "render_view",
    "to_uint8",
    "DualRenderer",
    "SdfPass",
    "VolumetricPass",
    "max_weight_points",
    "Trainer",
    "TrainingAbortedError",
    "TrainingResult",
    "TrainState",
    "parameter_digest",
    "restore_bundle",
]
