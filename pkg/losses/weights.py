"""
Loss weights, their stage/epoch schedule and the weighted totals.
"""

import logging
from typing import Dict, Mapping, Tuple

import torch
from pydantic import BaseModel, Field

from config import LossConfig

logger = logging.getLogger(__name__)

STAGE_INIT = "init"
STAGE_REFINE = "refine"

VOLUMETRIC_TERMS = ("rgb_vol", "distortion_vol", "sky_vol", "normal_vol_flat", "normal_vol_other",
                    "semantic", "tv_depth")
SDF_TERMS = ("rgb_sdf", "distortion_sdf", "sky_sdf", "normal_sdf_flat", "normal_sdf_other", "eikonal")
PROPOSAL_TERMS = ("proposal",)


class LossWeights(BaseModel):
    """Effective multiplier of every term for one step."""
    rgb: float = Field(1.0, ge=0.0)
    sky: float = Field(0.01, ge=0.0)
    distortion: float = Field(0.001, ge=0.0)
    normal_flat: float = Field(0.01, ge=0.0)
    normal_other: float = Field(0.01, ge=0.0)
    semantic: float = Field(0.001, ge=0.0)
    eikonal: float = Field(0.1, ge=0.0)
    tv_depth: float = Field(0.0, ge=0.0)
    proposal: float = Field(1.0, ge=0.0)

    @classmethod
    def for_stage(cls, config: LossConfig, stage: str, epoch: int, total_epochs: int) -> "LossWeights":
        """
        Resolve the schedule.

        * refine stage: flat-class normal weight and distortion weight take
          their refine overrides
        * epochs before ``early_epochs``: normal and distortion weights are
          scaled by ``early_factor``
        * optional reduced eikonal weight until the last
          ``eikonal_restore_epochs`` epochs
        * TV-on-depth only in epoch 0 and only when enabled
        """
        if stage not in (STAGE_INIT, STAGE_REFINE):
            raise ValueError(f"unknown stage '{stage}'")
        normal_flat = config.normal
        normal_other = config.normal
        distortion = config.distortion
        if stage == STAGE_REFINE:
            normal_flat = config.refine_normal_flat
            distortion = config.refine_distortion
        if epoch < config.early_epochs:
            normal_flat *= config.early_factor
            normal_other *= config.early_factor
            distortion *= config.early_factor
        eikonal = config.eikonal
        if config.eikonal_early_weight is not None and epoch < total_epochs - config.eikonal_restore_epochs:
            eikonal = config.eikonal_early_weight
        tv_depth = config.tv_depth if (config.tv_depth_enabled and epoch == 0) else 0.0
        return cls(
            sky=config.sky,
            distortion=distortion,
            normal_flat=normal_flat,
            normal_other=normal_other,
            semantic=config.semantic,
            eikonal=eikonal,
            tv_depth=tv_depth,
        )

    def term_weights(self) -> Dict[str, float]:
        return {
            "rgb_vol": self.rgb,
            "distortion_vol": self.distortion,
            "sky_vol": self.sky,
            "normal_vol_flat": self.normal_flat,
            "normal_vol_other": self.normal_other,
            "semantic": self.semantic,
            "tv_depth": self.tv_depth,
            "rgb_sdf": self.rgb,
            "distortion_sdf": self.distortion,
            "sky_sdf": self.sky,
            "normal_sdf_flat": self.normal_flat,
            "normal_sdf_other": self.normal_other,
            "eikonal": self.eikonal,
            "proposal": self.proposal,
        }


class LossReport(BaseModel):
    """Per-term values, the weights applied and the weighted totals of one step."""
    stage: str = STAGE_INIT
    terms: Dict[str, float] = Field(default_factory=dict)
    weights: Dict[str, float] = Field(default_factory=dict)
    volumetric_total: float = 0.0
    sdf_total: float = 0.0
    proposal_total: float = 0.0

    @property
    def total(self) -> float:
        return self.volumetric_total + self.sdf_total + self.proposal_total

    def recompute(self) -> Tuple[float, float, float]:
        """Weighted sums of the reported terms: (volumetric, sdf, proposal)."""
        def weighted(names) -> float:
            return sum(self.weights.get(n, 0.0) * self.terms.get(n, 0.0) for n in names)
        return weighted(VOLUMETRIC_TERMS), weighted(SDF_TERMS), weighted(PROPOSAL_TERMS)

    def to_log_record(self) -> Dict[str, float]:
        record = dict(self.terms)
        record.update(
            volumetric_total=self.volumetric_total,
            sdf_total=self.sdf_total,
            proposal_total=self.proposal_total,
            total=self.total,
        )
        return record


def _weighted_sum(terms: Mapping[str, torch.Tensor], weights: Mapping[str, float],
                  names: Tuple[str, ...], like: torch.Tensor) -> torch.Tensor:
    total = like.new_zeros(())
    for name in names:
        if name in terms and weights[name] != 0.0:
            total = total + weights[name] * terms[name]
    return total


def assemble_losses(
    terms: Mapping[str, torch.Tensor],
    weights: LossWeights,
    stage: str = STAGE_INIT,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, LossReport]:
    """
    Weighted totals of the volumetric, SDF and proposal objectives.

    Missing terms count as zero. The report's totals are recomputed in
    double precision from the reported floats.

    Returns:
        (L_v, L_f, L_p, LossReport)
    """
    if not terms:
        raise ValueError("no loss terms supplied")
    like = next(iter(terms.values()))
    term_weights = weights.term_weights()
    loss_v = _weighted_sum(terms, term_weights, VOLUMETRIC_TERMS, like)
    loss_f = _weighted_sum(terms, term_weights, SDF_TERMS, like)
    loss_p = _weighted_sum(terms, term_weights, PROPOSAL_TERMS, like)

    report = LossReport(
        stage=stage,
        terms={name: float(value.detach()) for name, value in terms.items()},
        weights=term_weights,
    )
    report.volumetric_total, report.sdf_total, report.proposal_total = report.recompute()
    return loss_v, loss_f, loss_p, report
