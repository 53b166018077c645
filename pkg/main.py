"""
Joint Radiance/SDF Reconstruction Engine - Command Line Entry Point

Subcommands:
1. generate-scene: synthesize a street-like dataset (images, cameras, LiDAR)
2. train: jointly optimize the volumetric and SDF fields
3. extract-mesh: polygonize the SDF of a checkpoint
4. render: render frames (color, depth, optional uncertainty maps)
5. evaluate: point-to-mesh metrics, precision and image metrics

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Failures print one line ``error kind=<Exception> message=<text>`` on stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from analysis import EvaluationReportBuilder
from config import ConfigError, RunConfig, get_settings, parse_config
from mesh import colorize_mesh, extract_mesh, read_mesh_ply, write_mesh_ply
from scene_data import DatasetError, SceneDataClient, SceneSpecError, write_float_grid
from training import (
    CheckpointError, DualRenderer, Trainer, load_checkpoint, render_view, restore_bundle, to_uint8,
)
from training.inference import FIELD_SDF, FIELD_VOLUMETRIC, UNCERTAINTY_CLAMP

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

USAGE_ERRORS = (ConfigError, DatasetError, SceneSpecError, FileNotFoundError)


class UsageError(Exception):
    """Invalid flag combination or missing input."""
    pass


# ============================================================================
# Argument parsing
# ============================================================================

def _parse_set(items: Optional[Sequence[str]]) -> Dict[str, Any]:
    """``--set section.key=value``; values are read as JSON when possible."""
    flags: Dict[str, Any] = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got '{item}'")
        try:
            flags[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            flags[key.strip()] = raw
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jneus",
        description="Joint volumetric radiance field and SDF reconstruction of street-like scenes",
    )
    parser.add_argument("--log-level", default=None, help="logging level (default from JNEUS_LOG_LEVEL)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML run document")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one run-document value (repeatable)")

    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate-scene", parents=[common], help="synthesize a dataset")
    gen.add_argument("--preset", default=None, help="scene preset (default mini-street)")
    gen.add_argument("--frames", type=int, default=None, help="camera poses along the trajectory")
    gen.add_argument("--width", type=int, default=None, help="image width in pixels")
    gen.add_argument("--height", type=int, default=None, help="image height in pixels")
    gen.add_argument("--seed", type=int, default=None, help="scene seed")
    gen.add_argument("--out", type=Path, required=True, help="dataset directory to write")

    train = sub.add_parser("train", parents=[common], help="train both fields")
    train.add_argument("--data", type=Path, required=True, help="dataset directory")
    train.add_argument("--out", type=Path, required=True, help="run directory (log, checkpoint, mesh)")
    train.add_argument("--epochs", type=int, default=None, help="number of epochs")
    train.add_argument("--seed", type=int, default=None, help="training seed")
    train.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")
    train.add_argument("--force", action="store_true", help="resume despite a config hash mismatch")
    train.add_argument("--dump-uncertainty", action="store_true", help="write per-epoch uncertainty quantiles CSV")
    train.add_argument("--no-relaxation", action="store_true", help="apply regularizers on every ray")
    train.add_argument("--no-grs", action="store_true", help="always sample the full ray interval")

    mesh = sub.add_parser("extract-mesh", parents=[common], help="polygonize the SDF of a checkpoint")
    mesh.add_argument("--checkpoint", type=Path, required=True, help="checkpoint file")
    mesh.add_argument("--data", type=Path, required=True, help="dataset directory (scene box)")
    mesh.add_argument("--resolution", type=int, default=None, help="marching-cubes cells per axis")
    mesh.add_argument("--out", type=Path, required=True, help="output PLY path")

    render = sub.add_parser("render", parents=[common], help="render frames of a checkpoint")
    render.add_argument("--checkpoint", type=Path, required=True, help="checkpoint file")
    render.add_argument("--data", type=Path, required=True, help="dataset directory (cameras)")
    render.add_argument("--out", type=Path, required=True, help="output directory")
    render.add_argument("--frames", type=int, nargs="*", default=None, help="frame indices (default all)")
    render.add_argument("--field", choices=[FIELD_VOLUMETRIC, FIELD_SDF], default=FIELD_VOLUMETRIC,
                        help="field to render")
    render.add_argument("--uncertainty", action="store_true", help="also write mu_d and mu_c maps")
    render.add_argument("--mesh", type=Path, default=None,
                        help="mesh PLY for the uncertainty maps (default: extract from the checkpoint)")

    evaluate = sub.add_parser("evaluate", parents=[common], help="score a mesh against LiDAR")
    evaluate.add_argument("--mesh", type=Path, required=True, help="mesh PLY")
    evaluate.add_argument("--lidar", type=Path, required=True, help="LiDAR point PLY")
    evaluate.add_argument("--extent", type=float, default=None,
                          help="scene extent for thresholds (default: LiDAR bounding box)")
    evaluate.add_argument("--rendered", type=Path, default=None, help="directory of rendered PNGs")
    evaluate.add_argument("--reference", type=Path, default=None, help="directory of reference PNGs")
    evaluate.add_argument("--error-cloud", type=Path, default=None, help="colored error-cloud PLY to write")
    evaluate.add_argument("--report", type=Path, default=None, help="JSON report path")
    return parser


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    """Dedicated flags map onto run-document keys; --set comes last and wins."""
    mapping = {
        "preset": "scene.preset",
        "frames": "scene.frames",
        "width": "scene.width",
        "height": "scene.height",
        "epochs": "train.epochs",
        "resolution": "mesh.resolution",
    }
    flags: Dict[str, Any] = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None and not (attr == "frames" and args.command == "render"):
            flags[key] = value
    if getattr(args, "seed", None) is not None:
        flags["scene.seed" if args.command == "generate-scene" else "train.seed"] = args.seed
    if getattr(args, "no_relaxation", False):
        flags["train.disable_relaxation"] = True
    if getattr(args, "no_grs", False):
        flags["train.disable_grs"] = True
    flags.update(_parse_set(getattr(args, "set", None)))
    return flags


# ============================================================================
# Subcommands
# ============================================================================

def cmd_generate_scene(args: argparse.Namespace, config: RunConfig) -> int:
    logger.info("=== Generating Scene ===")
    client = SceneDataClient()
    scene = client.generate_dataset(config.scene, args.out)
    logger.info(f"Wrote {len(scene.frames)} frames to {args.out}")
    print(json.dumps(client.describe(args.out), sort_keys=True))
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    logger.info("=== Training Run ===")
    dataset = SceneDataClient().load(args.data)
    if args.resume is not None:
        trainer, _ = Trainer.resume(config, dataset, args.out, args.resume, force=args.force,
                                    dump_uncertainty=args.dump_uncertainty)
    else:
        trainer = Trainer(config, dataset, args.out, dump_uncertainty=args.dump_uncertainty)
    result = trainer.run()
    print(json.dumps({
        "mesh": str(result.mesh_path),
        "checkpoint": str(result.checkpoint_path),
        "epochs": result.state.epoch,
        "steps": result.state.step,
        "aborted_steps": result.state.aborted_steps,
        "triangles": result.mesh.num_triangles,
    }, sort_keys=True))
    return EXIT_OK


def _load_fields(args: argparse.Namespace):
    dataset = SceneDataClient().load(args.data)
    checkpoint = load_checkpoint(args.checkpoint)
    config, bundle = restore_bundle(checkpoint, dataset.box_min, dataset.box_max)
    return dataset, config, bundle


def cmd_extract_mesh(args: argparse.Namespace, config: RunConfig) -> int:
    logger.info("=== Extracting Mesh ===")
    dataset, trained_config, bundle = _load_fields(args)
    resolution = args.resolution or config.mesh.resolution
    mesh = extract_mesh(bundle.sdf, resolution, dataset.spec.box_min, dataset.spec.box_max,
                        config.mesh.chunk_points)
    if mesh.is_empty:
        logger.warning("SDF has no zero crossing inside the scene box; writing an empty mesh")
    else:
        mesh = colorize_mesh(mesh, bundle.sdf)
    path = write_mesh_ply(mesh, args.out, comments=[f"config {trained_config.config_hash()}"])
    print(json.dumps({"mesh": str(path), "vertices": mesh.num_vertices, "triangles": mesh.num_triangles}))
    return EXIT_OK


def cmd_render(args: argparse.Namespace, config: RunConfig) -> int:
    logger.info("=== Rendering ===")
    dataset, trained_config, bundle = _load_fields(args)
    renderer = DualRenderer(bundle, trained_config.sampling, trained_config.render)
    frames = list(range(dataset.num_frames)) if not args.frames else args.frames
    for index in frames:
        if not 0 <= index < dataset.num_frames:
            raise UsageError(f"frame index {index} outside 0..{dataset.num_frames - 1}")

    mesh = None
    if args.uncertainty:
        if args.mesh is not None:
            mesh = read_mesh_ply(args.mesh)
        else:
            mesh = extract_mesh(bundle.sdf, config.mesh.resolution, dataset.spec.box_min,
                                dataset.spec.box_max, config.mesh.chunk_points)

    out = Path(args.out)
    for sub in ("rgb", "depth") + (("mu_d", "mu_c") if mesh is not None else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for index in frames:
        name = dataset.rig.frames[index].frame_id
        images = render_view(bundle, renderer, dataset, index, chunk=config.render.chunk_rays,
                             field=args.field, mesh=mesh)
        Image.fromarray(to_uint8(images["color"])).save(out / "rgb" / f"{name}.png")
        write_float_grid(out / "depth" / f"{name}.bin", images["depth"])
        if mesh is not None:
            Image.fromarray(to_uint8(images["mu_d"], UNCERTAINTY_CLAMP)).save(out / "mu_d" / f"{name}.png")
            Image.fromarray(to_uint8(images["mu_c"], UNCERTAINTY_CLAMP)).save(out / "mu_c" / f"{name}.png")
        logger.info(f"Rendered {name}")
    print(json.dumps({"out": str(out), "frames": len(frames), "field": args.field}))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    logger.info("=== Evaluation ===")
    if (args.rendered is None) != (args.reference is None):
        raise UsageError("--rendered and --reference must be given together")
    if not args.mesh.exists():
        raise FileNotFoundError(f"mesh not found: {args.mesh}")
    mesh = read_mesh_ply(args.mesh)
    lidar = SceneDataClient().load_lidar(args.lidar)
    extent = args.extent
    if extent is None:
        extent = float(np.max(lidar.points.max(axis=0) - lidar.points.min(axis=0))) if len(lidar) else 1.0
    builder = EvaluationReportBuilder(mesh, lidar, extent, config.metrics)
    report = builder.build_report(
        rendered_dir=args.rendered,
        reference_dir=args.reference,
        error_cloud_path=args.error_cloud,
        inputs={"mesh": str(args.mesh), "lidar": str(args.lidar)},
    )
    if args.report is not None:
        args.report.parent.mkdir(parents=True, exist_ok=True)
        args.report.write_text(report.to_json())
        logger.info(f"Report written: {args.report}")
    print(report.summary_table())
    return EXIT_OK


COMMANDS = {
    "generate-scene": cmd_generate_scene,
    "train": cmd_train,
    "extract-mesh": cmd_extract_mesh,
    "render": cmd_render,
    "evaluate": cmd_evaluate,
}


# ============================================================================
# Dispatch
# ============================================================================

def _configure_logging(level: Optional[str]) -> None:
    logging.basicConfig(
        level=(level or get_settings().log_level).upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )


def _report_error(exc: BaseException) -> None:
    message = " ".join(str(exc).split())
    print(f"error kind={type(exc).__name__} message={message}", file=sys.stderr)


def dispatch(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Run one subcommand.

    Returns:
        Exit status: 0 ok, 1 runtime failure, 2 usage or configuration error
    """
    try:
        return COMMANDS[args.command](args, config)
    except (UsageError,) + USAGE_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        _report_error(e)
        return EXIT_USAGE
    except CheckpointError as e:
        logger.error(f"{args.command} failed: {e}")
        _report_error(e)
        return EXIT_USAGE if "not found" in str(e) else EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"{args.command} failed")
        _report_error(e)
        return EXIT_RUNTIME


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        config = parse_config(args.config, flags=_flags(args))
    except ConfigError as e:
        _report_error(e)
        return EXIT_USAGE
    return dispatch(args, config)


if __name__ == "__main__":
    sys.exit(main())
