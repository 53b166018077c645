"""
Configuration settings for the joint radiance/SDF reconstruction engine.

Two layers live here:

* ``Settings`` - process-level knobs (log level, thread count, progress bars)
  loaded from environment variables and ``.env`` files, exactly like any
  other pydantic-settings application.
* ``RunConfig`` - the declarative run document covering every tunable of the
  pipeline, resolved from defaults, a TOML file, ``JNEUS_<SECTION>_<KEY>``
  environment variables and command-line flags (in increasing precedence).

SECURITY: Loads from .env.local (private, not committed) first,
then falls back to .env (template with placeholders)
"""

import hashlib
import json
import logging
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)

ENV_PREFIX = "JNEUS_"


class ConfigError(Exception):
    """Raised when a run document cannot be resolved."""
    pass


class Settings(BaseSettings):
    """Process configuration loaded from environment variables."""

    # Logging
    log_level: str = "INFO"

    # Torch intra-op threads (0 keeps the torch default)
    num_threads: int = 0

    # Progress bars during training
    progress: bool = True

    # Default location for generated datasets and runs
    data_root: str = "data"

    model_config = SettingsConfigDict(
        env_prefix=ENV_PREFIX,
        # Try .env.local first (private overrides), then .env (template)
        env_file=".env.local" if Path(".env.local").exists() else ".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# ============================================================================
# Run document sections
# ============================================================================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class FieldConfig(_Section):
    """Hash-grid fields, MLP heads and proposal estimators."""
    levels: int = Field(16, ge=1)
    coarsest_res: int = Field(16, ge=2)
    finest_res: int = Field(2048, ge=2)
    log2_table_size: int = Field(19, ge=4, le=24)
    features_per_level: int = Field(2, ge=1)
    sh_degree: int = Field(4, ge=1, le=4)
    hidden_layers: int = Field(2, ge=1)
    hidden_units: int = Field(64, ge=1)
    geo_feat_dim: int = Field(15, ge=1)
    num_classes: int = Field(5, ge=1)
    density_init: float = Field(0.1, gt=0.0)
    density_clamp: float = Field(15.0, gt=0.0)
    sdf_init_radius: float = Field(0.5, gt=0.0)
    sdf_scale_init: float = Field(10.0, gt=0.0)
    proposal_levels: int = Field(8, ge=1)
    proposal_finest_res: int = Field(512, ge=2)
    proposal_log2_table_size: int = Field(17, ge=4, le=24)
    proposal_hidden_units: int = Field(16, ge=1)
    sky_hidden_units: int = Field(32, ge=1)

    @model_validator(mode="after")
    def _check_resolutions(self) -> "FieldConfig":
        if self.finest_res < self.coarsest_res:
            raise ValueError("finest_res must be >= coarsest_res")
        if self.proposal_finest_res < self.coarsest_res:
            raise ValueError("proposal_finest_res must be >= coarsest_res")
        return self


class SamplingConfig(_Section):
    """Per-ray sample budgets and the shell schedule."""
    proposal0_samples: int = Field(128, ge=1)
    proposal1_samples: int = Field(96, ge=1)
    volumetric_samples: int = Field(48, ge=1)
    sdf_samples: int = Field(24, ge=1)
    refine_sdf_coarse_samples: int = Field(32, ge=2)
    refine_sdf_fine_samples: int = Field(28, ge=1)
    shell_init_fraction: float = Field(0.05, gt=0.0)
    shell_decay: float = Field(0.8, gt=0.0, le=1.0)
    shell_min_cells: float = Field(4.0, gt=0.0)


class RenderConfig(_Section):
    normalize_depth: bool = True
    depth_eps: float = Field(1e-6, gt=0.0)
    chunk_rays: int = Field(4096, ge=1)


class MeshConfig(_Section):
    resolution: int = Field(128, ge=8)
    chunk_points: int = Field(262144, ge=1)


class UncertaintyConfig(_Section):
    """Photometric/geometric thresholds and the adaptive tau_d policy."""
    tau_c: float = Field(0.02, gt=0.0)
    tau_d_init: float = Field(0.1, gt=0.0)
    gamma_up: float = 1.05
    gamma_down: float = 0.95
    rho_high: float = 1.0
    rho_low: float = 0.5
    flip_indicator: bool = False
    dump_quantiles: List[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 0.75, 0.9])

    @model_validator(mode="after")
    def _check_policy(self) -> "UncertaintyConfig":
        if not (self.gamma_up > 1.0 > self.gamma_down > 0.0):
            raise ValueError("require gamma_up > 1 > gamma_down > 0")
        if not (self.rho_high > self.rho_low > 0.0):
            raise ValueError("require rho_high > rho_low > 0")
        return self


class LossConfig(_Section):
    """Loss weights, stage overrides and optional schedules."""
    sky: float = Field(0.01, ge=0.0)
    distortion: float = Field(0.001, ge=0.0)
    normal: float = Field(0.01, ge=0.0)
    semantic: float = Field(0.001, ge=0.0)
    eikonal: float = Field(0.1, ge=0.0)
    refine_normal_flat: float = Field(0.05, ge=0.0)
    refine_distortion: float = Field(0.1, ge=0.0)
    early_factor: float = Field(0.1, ge=0.0)
    early_epochs: int = Field(1, ge=0)
    eikonal_early_weight: Optional[float] = Field(None, ge=0.0)
    eikonal_restore_epochs: int = Field(2, ge=0)
    tv_depth_enabled: bool = False
    tv_depth: float = Field(1e-4, ge=0.0)
    dssim_weight: float = Field(0.2, ge=0.0)
    gated_sdf_normals: bool = True
    flat_classes: List[str] = Field(default_factory=lambda: ["ground", "wall"])


class TrainConfig(_Section):
    epochs: int = Field(12, ge=1)
    rays_per_batch: int = Field(4096, ge=2)
    steps_per_epoch: Optional[int] = Field(None, ge=1)
    refine_start_epoch: Optional[int] = Field(None, ge=0)
    patch_size: int = Field(8, ge=3)
    patch_fraction: float = Field(0.5, ge=0.0, le=1.0)
    seed: int = 0
    lr_init: float = Field(1e-2, gt=0.0)
    lr_final: float = Field(1e-4, gt=0.0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-15, gt=0.0)
    max_consecutive_aborts: int = Field(3, ge=1)
    mesh_every_epochs: int = Field(1, ge=1)
    disable_relaxation: bool = False
    disable_grs: bool = False

    @model_validator(mode="after")
    def _check_stage(self) -> "TrainConfig":
        if self.refine_start_epoch is not None and self.refine_start_epoch >= self.epochs:
            raise ValueError("refine_start_epoch must be < epochs")
        return self

    @property
    def refine_epoch(self) -> int:
        """First epoch of the SDF refinement stage (final quarter by default)."""
        if self.refine_start_epoch is not None:
            return self.refine_start_epoch
        return max(self.epochs - math.ceil(0.25 * self.epochs), 1) if self.epochs > 1 else 0


class SceneConfig(_Section):
    preset: str = "mini-street"
    frames: int = Field(24, ge=2)
    step: float = Field(0.05, gt=0.0)
    cameras: List[str] = Field(default_factory=lambda: ["front", "left", "right"])
    width: int = Field(160, ge=8)
    height: int = Field(120, ge=8)
    fov_deg: float = Field(90.0, gt=1.0, lt=179.0)
    camera_height: float = 0.15
    side_yaw_deg: float = 45.0
    lidar_beams: int = Field(8, ge=1)
    lidar_azimuths: int = Field(180, ge=1)
    lidar_every: int = Field(4, ge=1)
    lidar_height: float = 0.25
    seed: int = 0


class MetricsConfig(_Section):
    # 0.15 m and 0.4 m expressed against a 50 m-equivalent extent
    precision_fraction: float = Field(0.15 / 50.0, gt=0.0)
    error_ramp_fraction: float = Field(0.4 / 50.0, gt=0.0)
    ssim_window: int = Field(11, ge=3)
    ssim_sigma: float = Field(1.5, gt=0.0)
    psnr_cap: float = Field(99.0, gt=0.0)


SECTIONS = ("field", "sampling", "render", "mesh", "uncertainty", "loss", "train", "scene", "metrics")


class RunConfig(_Section):
    """Fully resolved run document."""
    field: FieldConfig = Field(default_factory=FieldConfig)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)
    mesh: MeshConfig = Field(default_factory=MeshConfig)
    uncertainty: UncertaintyConfig = Field(default_factory=UncertaintyConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """SHA-256 of the canonical dump; independent of key order."""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


# ============================================================================
# Resolution: defaults < file < env < flags
# ============================================================================

def _coerce_env_value(raw: str) -> Any:
    """Env values are strings; lists and null are accepted as JSON."""
    text = raw.strip()
    if text.startswith("[") or text.lower() == "null":
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return raw
    return raw


def _env_overrides(env: Mapping[str, str]) -> Dict[str, Dict[str, Any]]:
    overrides: Dict[str, Dict[str, Any]] = {}
    for name, value in env.items():
        upper = name.upper()
        if not upper.startswith(ENV_PREFIX):
            continue
        rest = upper[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        # Variables outside the run sections belong to Settings
        if section not in SECTIONS or not key:
            continue
        overrides.setdefault(section, {})[key] = _coerce_env_value(value)
    return overrides


def _flag_overrides(flags: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    overrides: Dict[str, Dict[str, Any]] = {}
    for dotted, value in flags.items():
        if value is None:
            continue
        section, sep, key = dotted.partition(".")
        if not sep:
            raise ConfigError(f"flag key '{dotted}' must be <section>.<key>")
        overrides.setdefault(section, {})[key] = value
    return overrides


def _merge(base: Dict[str, Any], extra: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        key = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{key}: {err['msg']}")
    return "; ".join(parts)


def parse_config(
    path: Optional[Path] = None,
    env: Optional[Mapping[str, str]] = None,
    flags: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Resolve a RunConfig.

    Args:
        path: TOML run document; None means pure defaults
        env: environment mapping (defaults to os.environ)
        flags: dotted ``section.key`` overrides from the command line

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: missing file, unknown key or type mismatch (message names the key)
    """
    document: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with path.open("rb") as fh:
                document = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config file {path} is not valid TOML: {e}")

    document = _merge(document, _env_overrides(os.environ if env is None else env))
    document = _merge(document, _flag_overrides(flags or {}))

    try:
        config = RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e))

    logger.info(f"Resolved config (hash {config.config_hash()[:12]}): {config.canonical_json()}")
    return config
