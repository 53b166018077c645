"""Command-line surface: help text, exit codes and an end-to-end pipeline."""

import json

import pytest

import main as main_module
from config import get_settings
from main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, main
from mesh import SceneMesh

TINY_RUN = """
[field]
levels = 4
coarsest_res = 4
finest_res = 32
log2_table_size = 12
hidden_units = 32
proposal_levels = 2
proposal_finest_res = 16
proposal_log2_table_size = 10
proposal_hidden_units = 8
sky_hidden_units = 8

[sampling]
proposal0_samples = 16
proposal1_samples = 12
volumetric_samples = 8
sdf_samples = 8
refine_sdf_coarse_samples = 8
refine_sdf_fine_samples = 6

[mesh]
resolution = 24

[train]
epochs = 2
rays_per_batch = 256
steps_per_epoch = 3
patch_size = 4
patch_fraction = 0.25

[scene]
frames = 3
width = 24
height = 18
cameras = ["front"]
lidar_beams = 4
lidar_azimuths = 60
"""


@pytest.fixture(autouse=True)
def _quiet(monkeypatch):
    monkeypatch.setenv("JNEUS_PROGRESS", "false")
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


def _subparsers():
    parser = build_parser()
    return parser._subparsers._group_actions[0].choices


def _error_line(capsys):
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("error kind=")]
    assert len(lines) == 1
    return lines[0]


# ============================================================================
# Surface
# ============================================================================

@pytest.mark.parametrize("command", ["generate-scene", "train", "extract-mesh", "render", "evaluate"])
def test_every_flag_is_documented(command, capsys):
    sub = _subparsers()[command]
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for action in sub._actions:
        for option in action.option_strings:
            assert option in text


def test_missing_data_directory(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    code = main(["train", "--data", str(missing), "--out", str(tmp_path / "run")])
    assert code == EXIT_USAGE
    line = _error_line(capsys)
    assert "kind=DatasetError" in line
    assert str(missing) in line


def test_unknown_config_key(tmp_path, capsys):
    path = tmp_path / "run.toml"
    path.write_text("[train]\nfoo = 1\n")
    code = main(["generate-scene", "--config", str(path), "--out", str(tmp_path / "scene")])
    assert code == EXIT_USAGE
    assert "train.foo" in _error_line(capsys)


def test_missing_checkpoint_is_usage_error(tmp_path, capsys):
    code = main(["extract-mesh", "--checkpoint", str(tmp_path / "none.jnrs"), "--data", str(tmp_path),
                 "--out", str(tmp_path / "m.ply")])
    assert code == EXIT_USAGE
    _error_line(capsys)


def test_corrupt_mesh_is_runtime_error(tmp_path, capsys):
    mesh = tmp_path / "bad.ply"
    mesh.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 3\n")
    lidar = tmp_path / "lidar.ply"
    lidar.write_bytes(mesh.read_bytes())
    code = main(["evaluate", "--mesh", str(mesh), "--lidar", str(lidar)])
    assert code in (EXIT_USAGE, EXIT_RUNTIME)
    _error_line(capsys)


def test_evaluate_requires_both_image_dirs(tmp_path, capsys):
    code = main(["evaluate", "--mesh", str(tmp_path / "m.ply"), "--lidar", str(tmp_path / "l.ply"),
                 "--rendered", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "--reference" in _error_line(capsys)


# ============================================================================
# Pipeline
# ============================================================================

def test_pipeline_end_to_end(tmp_path, capsys, monkeypatch):
    config = tmp_path / "run.toml"
    config.write_text(TINY_RUN)
    scene, run = tmp_path / "scene", tmp_path / "run"

    assert main(["generate-scene", "--config", str(config), "--out", str(scene)]) == EXIT_OK
    described = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert described["frames"] == 3
    assert described["resolution"] == [24, 18]

    assert main(["train", "--config", str(config), "--data", str(scene), "--out", str(run)]) == EXIT_OK
    trained = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert trained["epochs"] == 2
    assert trained["steps"] == 6
    assert (run / "train_log.jsonl").exists()

    mesh = tmp_path / "mesh.ply"
    assert main(["extract-mesh", "--config", str(config), "--checkpoint", trained["checkpoint"],
                 "--data", str(scene), "--out", str(mesh)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["triangles"] > 0

    with monkeypatch.context() as patched:
        patched.setattr(main_module, "extract_mesh", lambda *args, **kwargs: SceneMesh())
        empty = tmp_path / "empty.ply"
        assert main(["extract-mesh", "--checkpoint", trained["checkpoint"], "--data", str(scene),
                     "--out", str(empty)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["triangles"] == 0
    assert empty.exists()

    renders = tmp_path / "renders"
    assert main(["render", "--config", str(config), "--checkpoint", trained["checkpoint"],
                 "--data", str(scene), "--out", str(renders), "--frames", "0", "2",
                 "--uncertainty", "--mesh", str(mesh)]) == EXIT_OK
    capsys.readouterr()
    assert sorted(p.name for p in (renders / "rgb").iterdir()) == ["0000_front.png", "0002_front.png"]
    assert len(list((renders / "mu_d").iterdir())) == 2

    assert main(["render", "--checkpoint", trained["checkpoint"], "--data", str(scene),
                 "--out", str(renders), "--frames", "7"]) == EXIT_USAGE
    capsys.readouterr()

    report = tmp_path / "report.json"
    code = main(["evaluate", "--config", str(config), "--mesh", str(mesh), "--lidar", str(scene / "lidar.ply"),
                 "--rendered", str(renders / "rgb"), "--reference", str(scene / "rgb"),
                 "--error-cloud", str(tmp_path / "err.ply"), "--report", str(report)])
    assert code == EXIT_OK
    data = json.loads(report.read_text())
    assert 0.0 <= data["geometry"]["precision"] <= 1.0
    assert (tmp_path / "err.ply").exists()
