"""
Optim Package - gradient accumulation, Adam stores and the learning-rate schedule.
"""

from optim.optimizer import (
    NonFiniteLossError, ParameterStore, adam_step, backward, check_finite, cosine_lr,
)

__all__ = [
    "NonFiniteLossError", "ParameterStore", "adam_step", "backward", "check_finite", "cosine_lr",
]
