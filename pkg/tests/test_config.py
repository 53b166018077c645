"""Run-document resolution: defaults, TOML file, environment and flags."""

import pytest

from config import ConfigError, RunConfig, get_settings, parse_config


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("")
    config = parse_config(path, env={})
    assert config == RunConfig()
    assert config.train.epochs == 12
    assert config.loss.eikonal == 0.1
    assert config.uncertainty.tau_c == pytest.approx(0.02)


def test_precedence_file_env_flags(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("[train]\nepochs = 5\nseed = 7\n\n[loss]\nsky = 0.5\n")
    env = {"JNEUS_TRAIN_EPOCHS": "6", "JNEUS_LOSS_SKY": "0.25", "JNEUS_LOG_LEVEL": "debug"}

    assert parse_config(path, env={}).train.epochs == 5
    config = parse_config(path, env=env)
    assert config.train.epochs == 6
    assert config.loss.sky == 0.25
    assert config.train.seed == 7

    config = parse_config(path, env=env, flags={"train.epochs": 9, "scene.frames": None})
    assert config.train.epochs == 9
    assert config.scene.frames == 24


def test_env_lists_are_json(tmp_path):
    config = parse_config(None, env={"JNEUS_SCENE_CAMERAS": '["front"]'})
    assert config.scene.cameras == ["front"]


@pytest.mark.parametrize("document, key", [
    ("foo = 1\n", "foo"),
    ("[train]\nfoo = 1\n", "train.foo"),
    ("[train]\nepochs = \"many\"\n", "train.epochs"),
    ("[train]\nepochs = 0\n", "train.epochs"),
])
def test_invalid_documents_name_the_key(tmp_path, document, key):
    path = tmp_path / "run.toml"
    path.write_text(document)
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config(path, env={})


def test_bad_sources():
    with pytest.raises(ConfigError, match="not found"):
        parse_config("/nonexistent/run.toml", env={})
    with pytest.raises(ConfigError):
        parse_config(None, env={}, flags={"epochs": 3})
    with pytest.raises(ConfigError, match="refine_start_epoch"):
        parse_config(None, env={}, flags={"train.epochs": 4, "train.refine_start_epoch": 4})


def test_config_hash_ignores_key_order():
    a = RunConfig.model_validate({"train": {"epochs": 3, "seed": 1}, "loss": {"sky": 0.2}})
    b = RunConfig.model_validate({"loss": {"sky": 0.2}, "train": {"seed": 1, "epochs": 3}})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != RunConfig().config_hash()
    assert RunConfig.model_validate_json(a.canonical_json()) == a


def test_refine_epoch_defaults_to_final_quarter():
    assert RunConfig.model_validate({"train": {"epochs": 12}}).train.refine_epoch == 9
    assert RunConfig.model_validate({"train": {"epochs": 2}}).train.refine_epoch == 1
    assert RunConfig.model_validate({"train": {"epochs": 1}}).train.refine_epoch == 0


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("JNEUS_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("JNEUS_NUM_THREADS", "2")
    get_settings.cache_clear()
    try:
        settings = get_settings()
        assert settings.log_level == "DEBUG"
        assert settings.num_threads == 2
    finally:
        get_settings.cache_clear()
