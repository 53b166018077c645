"""
Joint training of the volumetric field and the SDF field.

Every step: mesh guidance (depth and photometric uncertainty per ray),
guided volumetric render and its objective, geometric uncertainty,
guided SDF render and its gated objective, one Adam update per field,
then the adaptive threshold update. The mesh snapshot is re-extracted at
epoch boundaries only, so guidance is constant within an epoch.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from analysis.photometric import psnr
from config import RunConfig, get_settings
from fields.networks import FieldBundle
from guidance.sampling import (
    Branch, SamplingBounds, ShellSchedule, full_bounds, sdf_grs_bounds, shell_update,
    volumetric_grs_bounds,
)
from guidance.uncertainty import (
    ThresholdPolicy, UncertaintyRecord, UncertaintyTracker, certainty_indicator,
    geometric_uncertainty, photometric_uncertainty, update_threshold_from_hits,
)
from losses.terms import (
    distortion_loss, eikonal_loss_u, normal_loss_parts, proposal_loss, rgb_loss, semantic_loss,
    sky_loss, tv_depth_loss,
)
from losses.weights import STAGE_INIT, STAGE_REFINE, LossReport, LossWeights, assemble_losses
from mesh.marching import colorize_mesh, extract_mesh
from mesh.models import SceneMesh
from mesh.ply import write_mesh_ply
from mesh.queries import ray_mesh_depth
from optim.optimizer import NonFiniteLossError, ParameterStore, adam_step, backward, cosine_lr
from render.rays import RayBundle
from scene_data.dataset import TrainingDataset
from scene_data.models import SemanticClass
from training.batches import BatchSampler, RayBatch, step_generator
from training.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint, stores_state
from training.inference import render_view
from training.rendering import DualRenderer

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.jnrs"
MESH_NAME = "mesh.ply"
LOG_NAME = "train_log.jsonl"
UNCERTAINTY_NAME = "uncertainty.csv"


class TrainingAbortedError(Exception):
    """Raised after too many consecutive steps with a non-finite loss."""
    pass


@dataclass
class TrainState:
    """Counters and adaptive quantities carried across steps and checkpoints."""
    epoch: int = 0
    step: int = 0
    tau_d: float = 0.1
    delta: float = 0.0
    consecutive_aborts: int = 0
    aborted_steps: int = 0


@dataclass
class Guidance:
    """Per-ray mesh guidance of one batch."""
    mesh_depth: torch.Tensor
    mu_c: torch.Tensor
    indicator: torch.Tensor
    has_mesh: bool


@dataclass
class StepOutput:
    report: LossReport
    record: Dict[str, Any] = field(default_factory=dict)


@dataclass
class TrainingResult:
    mesh: SceneMesh
    mesh_path: Path
    checkpoint_path: Path
    state: TrainState
    view_psnr: Dict[int, float] = field(default_factory=dict)


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    return value


def _branch_fractions(bounds: SamplingBounds) -> Dict[str, float]:
    return {branch.name.lower(): bounds.fraction(branch) for branch in Branch}


class Trainer:
    """
    Owns the fields, both optimizers, the mesh snapshot and the run state.

    Handles:
    - Per-step dual rendering and loss assembly
    - Epoch scheduling (stage switch, shell decay, mesh snapshots)
    - Checkpointing and telemetry
    """

    def __init__(self, config: RunConfig, dataset: TrainingDataset, out_dir: Path,
                 dump_uncertainty: bool = False):
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.settings = get_settings()
        if self.settings.num_threads > 0:
            torch.set_num_threads(self.settings.num_threads)

        train = config.train
        self.bundle = FieldBundle(config.field, dataset.box_min, dataset.box_max, seed=train.seed)
        self.renderer = DualRenderer(self.bundle, config.sampling, config.render)
        betas = (train.adam_beta1, train.adam_beta2)
        self.vol_store = ParameterStore("volumetric", self.bundle.volumetric_parameters(),
                                        lr=train.lr_init, betas=betas, eps=train.adam_eps)
        self.sdf_store = ParameterStore("sdf", self.bundle.sdf_parameters(),
                                        lr=train.lr_init, betas=betas, eps=train.adam_eps)
        self.stores = {store.name: store for store in (self.vol_store, self.sdf_store)}

        self.policy = ThresholdPolicy.from_config(config.uncertainty)
        self.shell = ShellSchedule(
            dataset.extent, config.mesh.resolution,
            init_fraction=config.sampling.shell_init_fraction,
            decay=config.sampling.shell_decay,
            min_cells=config.sampling.shell_min_cells,
        )
        self.state = TrainState(tau_d=config.uncertainty.tau_d_init, delta=self.shell.initial)
        self.mesh: Optional[SceneMesh] = None

        self.sampler = BatchSampler(dataset, train.rays_per_batch, train.patch_size,
                                    train.patch_fraction, seed=train.seed)
        self.steps_per_epoch = train.steps_per_epoch or math.ceil(dataset.num_pixels / train.rays_per_batch)
        self.total_steps = self.steps_per_epoch * train.epochs
        flat = set(config.loss.flat_classes)
        self.flat_labels = torch.tensor([c.label for c in SemanticClass if c.value in flat], dtype=torch.long)

        self.log_path = self.out_dir / LOG_NAME
        self.tracker = UncertaintyTracker(
            self.out_dir / UNCERTAINTY_NAME if dump_uncertainty else None,
            config.uncertainty.dump_quantiles,
        )
        logger.info(f"Trainer initialized: {train.epochs} epochs x {self.steps_per_epoch} steps, "
                    f"refine from epoch {train.refine_epoch}, output {self.out_dir}")

    # =========================================================================
    # STEP
    # =========================================================================

    def stage_for(self, epoch: int) -> str:
        return STAGE_REFINE if epoch >= self.config.train.refine_epoch else STAGE_INIT

    def guidance(self, rays: RayBundle, gt_rgb: torch.Tensor) -> Guidance:
        """Mesh depth, mu_c and the relaxation indicator; everything is uncertain without a mesh."""
        num_rays = len(rays)
        has_mesh = self.mesh is not None and not self.mesh.is_empty
        if has_mesh:
            depth = ray_mesh_depth(self.mesh, rays.origins.double().numpy(), rays.directions.double().numpy())
            mesh_depth = torch.from_numpy(depth).to(rays.origins.dtype)
            mu_c = photometric_uncertainty(self.bundle.sdf, rays.origins, rays.directions, mesh_depth, gt_rgb)
        else:
            mesh_depth = torch.full((num_rays,), math.inf, dtype=rays.origins.dtype)
            mu_c = torch.ones(num_rays, dtype=rays.origins.dtype)
        uconf = self.config.uncertainty
        # Without a snapshot every ray is uncertain for sampling (mu_c = 1, full
        # bounds) but nothing is relaxed: the indicator is all ones, as with
        # disable_relaxation, so the eikonal and normal terms act from step 0.
        if has_mesh and not self.config.train.disable_relaxation:
            indicator = certainty_indicator(mu_c, uconf.tau_c, uconf.flip_indicator)
        else:
            indicator = torch.ones(num_rays, dtype=torch.bool)
        return Guidance(mesh_depth=mesh_depth, mu_c=mu_c, indicator=indicator, has_mesh=has_mesh)

    def _flat_mask(self, labels: torch.Tensor) -> torch.Tensor:
        return torch.isin(labels, self.flat_labels)

    def train_step(self, batch: RayBatch, generator: torch.Generator) -> StepOutput:
        """
        One optimization step.

        Raises:
            NonFiniteLossError: a loss term is NaN/Inf; parameters are untouched
        """
        config = self.config
        state = self.state
        stage = self.stage_for(state.epoch)
        weights = LossWeights.for_stage(config.loss, stage, state.epoch, config.train.epochs)
        rays = self.dataset.rays(batch.pixel_ids)
        targets = self.dataset.targets(batch.pixel_ids)
        gt_rgb, gt_normal, gt_labels, sky = targets["rgb"], targets["normal"], targets["semantic"], targets["sky"]
        surface = ~sky
        flat = self._flat_mask(gt_labels)
        patches = batch.num_patches > 0
        self.bundle.take_outside_points()

        # mesh guidance
        guide = self.guidance(rays, gt_rgb)
        use_grs = guide.has_mesh and not config.train.disable_grs
        delta = state.delta

        # volumetric pass
        if use_grs:
            vol_bounds = volumetric_grs_bounds(rays, guide.mu_c, guide.mesh_depth, delta, config.uncertainty.tau_c)
        else:
            vol_bounds = full_bounds(rays, delta)
        vol = self.renderer.render_volumetric(rays, vol_bounds, generator)
        vol_out = vol.outputs
        terms: Dict[str, torch.Tensor] = {}
        terms["rgb_vol"] = rgb_loss(
            vol_out.color, gt_rgb,
            batch.patches(vol_out.color) if patches else None,
            batch.patches(gt_rgb) if patches else None,
            config.loss.dssim_weight,
        )
        terms["distortion_vol"] = distortion_loss(vol_out.weights, vol.samples.normalized_edges())
        terms["sky_vol"] = sky_loss(vol_out.accumulation, sky)
        vol_grads = self.renderer.volumetric_normal_gradients(rays, vol)
        terms["normal_vol_flat"], terms["normal_vol_other"], skipped_vol = normal_loss_parts(
            vol_grads, gt_normal, surface, flat)
        terms["semantic"] = semantic_loss(vol.semantics, gt_labels, surface)
        if weights.tv_depth > 0.0 and patches:
            terms["tv_depth"] = tv_depth_loss(batch.patches(vol_out.depth))
        terms["proposal"] = sum(
            proposal_loss(edges, w, vol.samples.edges, vol_out.weights)
            for edges, w in zip(vol.proposal_edges, vol.proposal_weights)
        )

        # geometric uncertainty
        mu_d = geometric_uncertainty(guide.mesh_depth, vol_out.depth)

        # SDF pass
        if use_grs:
            sdf_bounds = sdf_grs_bounds(rays, mu_d, guide.mesh_depth, vol_out.depth, delta, state.tau_d)
        else:
            sdf_bounds = full_bounds(rays, delta)
        sdf = self.renderer.render_sdf(rays, sdf_bounds, stage, generator)
        sdf_out = sdf.outputs
        terms["rgb_sdf"] = rgb_loss(
            sdf_out.color, gt_rgb,
            batch.patches(sdf_out.color) if patches else None,
            batch.patches(gt_rgb) if patches else None,
            config.loss.dssim_weight,
        )
        terms["distortion_sdf"] = distortion_loss(sdf_out.weights, sdf.samples.normalized_edges())
        terms["sky_sdf"] = sky_loss(sdf_out.accumulation, sky)
        sdf_grads = self.renderer.sdf_normal_gradients(rays, sdf)
        normal_gate = surface & guide.indicator if config.loss.gated_sdf_normals else surface
        terms["normal_sdf_flat"], terms["normal_sdf_other"], skipped_sdf = normal_loss_parts(
            sdf_grads, gt_normal, normal_gate, flat)
        terms["eikonal"] = eikonal_loss_u(sdf.edge_gradients, guide.indicator)

        # optimizer updates
        loss_v, loss_f, loss_p, report = assemble_losses(terms, weights, stage)
        grad_norms = backward(loss_v + loss_f + loss_p, [self.vol_store, self.sdf_store], terms)
        lr = cosine_lr(state.step, self.total_steps, config.train.lr_init, config.train.lr_final)
        adam_step(self.vol_store, lr)
        adam_step(self.sdf_store, lr)

        tau_before = state.tau_d
        state.tau_d = update_threshold_from_hits(state.tau_d, mu_d, self.policy)
        self.tracker.observe(UncertaintyRecord(mu_d=mu_d, mu_c=guide.mu_c, tau_d=tau_before,
                                               tau_c=config.uncertainty.tau_c, indicator=guide.indicator))

        record = {
            "epoch": state.epoch,
            "step": state.step,
            "stage": stage,
            "lr": lr,
            "tau_d": tau_before,
            "delta": delta,
            "has_mesh": guide.has_mesh,
            "indicator_fraction": float(guide.indicator.float().mean()),
            "normal_skipped": skipped_vol + skipped_sdf,
            "outside_points": self.bundle.take_outside_points(),
            "branches_vol": _branch_fractions(vol_bounds),
            "branches_sdf": _branch_fractions(sdf_bounds),
            "grad_norm": grad_norms,
            **report.to_log_record(),
        }
        state.step += 1
        state.consecutive_aborts = 0
        return StepOutput(report=report, record=record)

    # =========================================================================
    # EPOCHS
    # =========================================================================

    def _log(self, record: Dict[str, Any]) -> None:
        with self.log_path.open("a") as fh:
            fh.write(json.dumps(_json_safe(record), sort_keys=True) + "\n")

    def run_epoch(self, epoch: int) -> Optional[LossReport]:
        """All steps of one epoch; the mesh snapshot is not touched."""
        self.state.epoch = epoch
        last: Optional[LossReport] = None
        first_step = self.state.step - epoch * self.steps_per_epoch
        steps = range(first_step, self.steps_per_epoch)
        for step_in_epoch in tqdm(steps, desc=f"epoch {epoch}", disable=not self.settings.progress):
            generator = step_generator(self.config.train.seed, self.state.step)
            batch = self.sampler.sample(epoch, step_in_epoch, generator)
            try:
                output = self.train_step(batch, generator)
            except NonFiniteLossError as e:
                self.state.consecutive_aborts += 1
                self.state.aborted_steps += 1
                logger.warning(f"Step {self.state.step} aborted: {e}")
                self._log({"epoch": epoch, "step": self.state.step, "aborted": True,
                           "term": e.term, "value": e.value})
                self.state.step += 1
                if self.state.consecutive_aborts >= self.config.train.max_consecutive_aborts:
                    raise TrainingAbortedError(
                        f"{self.state.consecutive_aborts} consecutive non-finite steps (last term '{e.term}')"
                    ) from e
                continue
            self._log(output.record)
            last = output.report
        return last

    def extract_snapshot(self) -> SceneMesh:
        mesh_config = self.config.mesh
        return extract_mesh(self.bundle.sdf, mesh_config.resolution, self.dataset.spec.box_min,
                            self.dataset.spec.box_max, mesh_config.chunk_points)

    def view_psnr(self, frame_index: int = 0) -> float:
        """PSNR of the volumetric rendering of one training view."""
        image = render_view(self.bundle, self.renderer, self.dataset, frame_index,
                            chunk=self.config.render.chunk_rays)["color"]
        return psnr(image, self.dataset.rgb[frame_index], cap=self.config.metrics.psnr_cap)

    def run(self, track_view: Optional[int] = 0) -> TrainingResult:
        """
        Train from the current state to the configured epoch count.

        Returns:
            TrainingResult with the final colorized mesh and checkpoint paths
        """
        train = self.config.train
        logger.info("=== Training ===")
        checkpoint_path = self.out_dir / CHECKPOINT_NAME
        psnr_history: Dict[int, float] = {}
        for epoch in range(self.state.epoch, train.epochs):
            logger.info(f"--- Epoch {epoch} ({self.stage_for(epoch)}) ---")
            self.run_epoch(epoch)
            self.state.delta = shell_update(self.state.delta, self.shell)
            summary = self.tracker.flush(epoch, self.state.tau_d)
            last_epoch = epoch + 1 == train.epochs
            if (epoch + 1) % train.mesh_every_epochs == 0 or last_epoch:
                self.mesh = self.extract_snapshot()
                self.state.epoch = epoch + 1
                self.save(checkpoint_path)
            else:
                self.state.epoch = epoch + 1
            epoch_record = {"epoch_end": epoch, "tau_d": self.state.tau_d, "delta": self.state.delta,
                            "mesh_triangles": 0 if self.mesh is None else self.mesh.num_triangles}
            epoch_record.update(summary)
            if track_view is not None:
                psnr_history[epoch] = self.view_psnr(track_view)
                epoch_record["view_psnr"] = psnr_history[epoch]
            self._log(epoch_record)
            logger.info(f"Epoch {epoch} done: tau_d {self.state.tau_d:.4f}, delta {self.state.delta:.4f}")

        mesh = self.mesh if self.mesh is not None else self.extract_snapshot()
        if not mesh.is_empty:
            mesh = colorize_mesh(mesh, self.bundle.sdf)
        mesh_path = write_mesh_ply(mesh, self.out_dir / MESH_NAME,
                                   comments=[f"config {self.config.config_hash()}"])
        logger.info(f"Training finished: mesh {mesh_path}, checkpoint {checkpoint_path}")
        return TrainingResult(mesh=mesh, mesh_path=mesh_path, checkpoint_path=checkpoint_path,
                              state=self.state, view_psnr=psnr_history)

    # =========================================================================
    # CHECKPOINTS
    # =========================================================================

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config_hash=self.config.config_hash(),
            metadata={"state": asdict(self.state), "has_mesh": self.mesh is not None,
                      "config": self.config.model_dump(mode="json")},
            stores=stores_state(self.stores),
        )

    def save(self, path: Path) -> Path:
        """Checkpoints are written at epoch boundaries where the mesh snapshot was refreshed."""
        return save_checkpoint(self.checkpoint(), path)

    def restore(self, checkpoint: Checkpoint) -> None:
        """Load parameters, optimizer moments and counters; re-extract the mesh snapshot."""
        for name, store in self.stores.items():
            if name not in checkpoint.stores:
                raise CheckpointError(f"checkpoint has no parameter store '{name}'")
            store.import_state(checkpoint.stores[name])
        self.state = TrainState(**checkpoint.metadata["state"])
        self.mesh = self.extract_snapshot() if checkpoint.metadata.get("has_mesh") else None
        logger.info(f"Resumed at epoch {self.state.epoch}, step {self.state.step}")

    @classmethod
    def resume(cls, config: RunConfig, dataset: TrainingDataset, out_dir: Path, checkpoint_path: Path,
               force: bool = False, dump_uncertainty: bool = False) -> Tuple["Trainer", Checkpoint]:
        checkpoint = load_checkpoint(checkpoint_path, expected_hash=config.config_hash(), force=force)
        trainer = cls(config, dataset, out_dir, dump_uncertainty=dump_uncertainty)
        trainer.restore(checkpoint)
        return trainer, checkpoint


def restore_bundle(checkpoint: Checkpoint, box_min, box_max,
                   config: Optional[RunConfig] = None) -> Tuple[RunConfig, FieldBundle]:
    """
    Rebuild the fields stored in a checkpoint for inference.

    The run document embedded at save time defines the architecture unless
    ``config`` is given.
    """
    if config is None:
        if "config" not in checkpoint.metadata:
            raise CheckpointError("checkpoint carries no run document")
        config = RunConfig.model_validate(checkpoint.metadata["config"])
    bundle = FieldBundle(config.field, box_min, box_max, seed=config.train.seed)
    named = {"volumetric": bundle.volumetric_parameters(), "sdf": bundle.sdf_parameters()}
    with torch.no_grad():
        for store_name, params in named.items():
            stored = checkpoint.stores.get(store_name, {})
            for name, param in params:
                if name not in stored:
                    raise CheckpointError(f"checkpoint store '{store_name}' has no parameter '{name}'")
                param.copy_(torch.from_numpy(np.asarray(stored[name]["value"])).reshape(param.shape))
    return config, bundle


def parameter_digest(trainer: Trainer) -> str:
    """SHA-256 over all exported parameter values, for reproducibility checks."""
    digest = hashlib.sha256()
    for store_name in sorted(trainer.stores):
        exported = trainer.stores[store_name].export_state()
        for name in sorted(exported):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(exported[name]["value"]).tobytes())
    return digest.hexdigest()
