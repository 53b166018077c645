"""
Cross-representation uncertainty.

* mu_d compares the mesh hit distance with the volumetric rendered depth.
* mu_c compares a single SDF color sample at the mesh hit with the pixel.
* tau_d adapts once per batch so that the uncertain/certain ratio stays
  within [rho_low, rho_high].

Rays that miss the mesh are uncertain: mu_d = +inf and mu_c = 1.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from pydantic import BaseModel, model_validator

from config import UncertaintyConfig

logger = logging.getLogger(__name__)

UNCERTAIN = math.inf


class ThresholdPolicy(BaseModel):
    """Growth/decay factors and ratio band of the adaptive tau_d rule."""
    gamma_up: float = 1.05
    gamma_down: float = 0.95
    rho_high: float = 1.0
    rho_low: float = 0.5

    @model_validator(mode="after")
    def _check(self) -> "ThresholdPolicy":
        if not (self.gamma_up > 1.0 > self.gamma_down > 0.0):
            raise ValueError("require gamma_up > 1 > gamma_down > 0")
        if not (self.rho_high > self.rho_low > 0.0):
            raise ValueError("require rho_high > rho_low > 0")
        return self

    @classmethod
    def from_config(cls, config: UncertaintyConfig) -> "ThresholdPolicy":
        return cls(gamma_up=config.gamma_up, gamma_down=config.gamma_down,
                   rho_high=config.rho_high, rho_low=config.rho_low)


@dataclass
class UncertaintyRecord:
    """Per-ray uncertainty of one batch and the thresholds it was judged against."""
    mu_d: torch.Tensor
    mu_c: torch.Tensor
    tau_d: float
    tau_c: float
    indicator: torch.Tensor


def geometric_uncertainty(mesh_depth: torch.Tensor, volume_depth: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """mu_d = |1 - D_mesh / D_vol|; +inf for misses and non-positive volumetric depth."""
    mesh_depth = mesh_depth.detach()
    volume_depth = volume_depth.detach()
    valid = torch.isfinite(mesh_depth) & (volume_depth > eps)
    ratio = mesh_depth / torch.where(valid, volume_depth, torch.ones_like(volume_depth))
    mu = (1.0 - ratio).abs()
    return torch.where(valid, mu, torch.full_like(mu, UNCERTAIN))


def photometric_from_colors(mesh_color: torch.Tensor, gt_color: torch.Tensor, hit: torch.Tensor) -> torch.Tensor:
    """Channel-mean absolute error; misses get the maximal value 1."""
    mu = (mesh_color.detach() - gt_color).abs().mean(dim=-1)
    return torch.where(hit, mu, torch.ones_like(mu)).clamp(0.0, 1.0)


def photometric_uncertainty(field, origins: torch.Tensor, directions: torch.Tensor,
                            mesh_depth: torch.Tensor, gt_color: torch.Tensor) -> torch.Tensor:
    """
    mu_c from one SDF color query per ray at ``o + D_mesh u`` looking along ``u``.

    Args:
        field: SdfField (anything with ``color(x, dirs)``)
        origins, directions: rays [R, 3]
        mesh_depth: mesh hit distance [R], inf for MISS
        gt_color: pixel colors [R, 3]
    """
    hit = torch.isfinite(mesh_depth)
    mu = torch.ones_like(mesh_depth)
    if bool(hit.any()):
        with torch.no_grad():
            x = origins[hit] + mesh_depth[hit, None] * directions[hit]
            color = field.color(x, directions[hit])
        mu[hit] = (color.to(mu.dtype) - gt_color[hit].to(mu.dtype)).abs().mean(dim=-1).clamp(0.0, 1.0)
    return mu


def update_threshold(tau: float, mu_batch: Union[torch.Tensor, np.ndarray], policy: ThresholdPolicy) -> float:
    """
    One adaptive step of tau_d.

    u = #{mu > tau}, c = N - u, rho = u / c (infinite when c = 0);
    rho > rho_high grows tau, rho < rho_low shrinks it, otherwise unchanged.
    """
    mu = torch.as_tensor(mu_batch)
    if mu.numel() == 0:
        raise ValueError("update_threshold needs a nonempty batch")
    uncertain = int((mu > tau).sum())
    certain = mu.numel() - uncertain
    rho = math.inf if certain == 0 else uncertain / certain
    if rho > policy.rho_high:
        return tau * policy.gamma_up
    if rho < policy.rho_low:
        return tau * policy.gamma_down
    return tau


def update_threshold_from_hits(tau: float, mu_d: torch.Tensor, policy: ThresholdPolicy) -> float:
    """
    tau_d step over the rays that hit the mesh.

    Misses (the infinite sentinel) are left out of both counts; a batch
    of misses only leaves tau unchanged.
    """
    finite = mu_d[torch.isfinite(mu_d)]
    if finite.numel() == 0:
        return tau
    return update_threshold(tau, finite, policy)


def certainty_indicator(mu_c: torch.Tensor, tau_c: float, flip: bool = False) -> torch.Tensor:
    """1 where the ray is photometrically certain (mu_c <= tau_c); ``flip`` inverts the gate."""
    certain = mu_c <= tau_c
    return ~certain if flip else certain


class UncertaintyTracker:
    """Collects per-ray mu_d / mu_c over an epoch and appends quantile rows to a CSV."""

    def __init__(self, path: Optional[Path] = None, quantiles: Sequence[float] = (0.1, 0.25, 0.5, 0.75, 0.9)):
        self.path = Path(path) if path is not None else None
        self.quantiles = list(quantiles)
        self._mu_d: List[np.ndarray] = []
        self._mu_c: List[np.ndarray] = []
        # a resumed run keeps the rows of earlier epochs
        if self.path is not None and (not self.path.exists() or self.path.stat().st_size == 0):
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as fh:
                header = ["epoch", "tau_d", "miss_fraction"]
                header += [f"mu_d_q{q:g}" for q in self.quantiles] + [f"mu_c_q{q:g}" for q in self.quantiles]
                csv.writer(fh).writerow(header)

    def observe(self, record: UncertaintyRecord) -> None:
        self._mu_d.append(record.mu_d.detach().cpu().numpy().astype(np.float64))
        self._mu_c.append(record.mu_c.detach().cpu().numpy().astype(np.float64))

    def summarize(self) -> Dict[str, float]:
        if not self._mu_d:
            return {}
        mu_d = np.concatenate(self._mu_d)
        mu_c = np.concatenate(self._mu_c)
        finite = mu_d[np.isfinite(mu_d)]
        summary = {"miss_fraction": float(1.0 - finite.size / max(mu_d.size, 1))}
        for q in self.quantiles:
            summary[f"mu_d_q{q:g}"] = float(np.quantile(finite, q)) if finite.size else math.inf
            summary[f"mu_c_q{q:g}"] = float(np.quantile(mu_c, q))
        return summary

    def flush(self, epoch: int, tau_d: float) -> Dict[str, float]:
        summary = self.summarize()
        if self.path is not None and summary:
            row = [epoch, tau_d, summary["miss_fraction"]]
            row += [summary[f"mu_d_q{q:g}"] for q in self.quantiles]
            row += [summary[f"mu_c_q{q:g}"] for q in self.quantiles]
            with self.path.open("a", newline="") as fh:
                csv.writer(fh).writerow(row)
        self._mu_d.clear()
        self._mu_c.clear()
        return summary
