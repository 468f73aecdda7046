import pytest

from burstfuse.config import (
    CACHE_ENV_VAR, CONFIG_ENV_VAR, Config, load_config, parse_config_text,
)
from burstfuse.errors import UsageError


def test_parse_config_text_coerces_types():
    values = parse_config_text("""
        # merge settings
        zoom = 1.5
        tile_size = 32
        robustness = off   # switch
        kernel = iso
    """)
    assert values == {'zoom': 1.5, 'tile_size': 32, 'robustness': False, 'kernel': 'iso'}


def test_dashed_keys_are_accepted():
    assert parse_config_text("hf-loss-threshold=0.4") == {'hf_loss_threshold': 0.4}


def test_unknown_key_is_a_usage_error():
    with pytest.raises(UsageError, match="unknown config key"):
        parse_config_text("sharpen=1")


def test_mistyped_value_is_a_usage_error():
    with pytest.raises(UsageError):
        parse_config_text("pyramid_levels=deep")
    with pytest.raises(UsageError):
        parse_config_text("finish=maybe")


def test_line_without_equals_is_rejected():
    with pytest.raises(UsageError):
        parse_config_text("zoom 2")


def test_defaults_leave_tuning_to_snr(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    config = load_config()
    assert config == Config()
    assert config.tuning_overrides() == {}


def test_precedence_env_then_file_then_flags(tmp_path, monkeypatch):
    env_file = tmp_path / "env.cfg"
    env_file.write_text("zoom=2.0\nk_detail=0.3\nthreads=4\n")
    cli_file = tmp_path / "cli.cfg"
    cli_file.write_text("zoom=1.5\n")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(env_file))

    config = load_config(str(cli_file), {'threads': 2, 'kernel': None})

    assert config.zoom == 1.5
    assert config.k_detail == 0.3
    assert config.threads == 2
    assert config.kernel == 'aniso'
    assert config.tuning_overrides() == {'k_detail': 0.3}


def test_missing_config_file_is_an_input_error(tmp_path, monkeypatch):
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    with pytest.raises(OSError):
        load_config(str(tmp_path / "absent.cfg"))


@pytest.mark.parametrize("text", ["zoom=0.5", "alignment=magic", "noise_bins=8", "k_denoise=-1"])
def test_validation_rejects_out_of_range_values(text, tmp_path, monkeypatch):
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(UsageError):
        load_config(str(path))


def test_cache_dir_resolution(monkeypatch, tmp_path):
    monkeypatch.setenv(CACHE_ENV_VAR, str(tmp_path))
    assert Config().resolved_cache_dir() == str(tmp_path)
    assert Config(cache_dir="/elsewhere").resolved_cache_dir() == "/elsewhere"


def test_worker_threads():
    assert Config(threads=3).worker_threads() == 3
    assert Config().worker_threads() >= 1
