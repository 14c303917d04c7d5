import os

import pytest

from stylecast import config as config_mod
from stylecast.config import ExperimentConfig, apply_overrides, validate
from stylecast.errors import ConfigError


def test_defaults_are_valid():
    validate(ExperimentConfig())


def test_token_table_size_is_fixed():
    cfg = ExperimentConfig()
    cfg.dims.n_tokens = 12
    with pytest.raises(ConfigError, match="n_tokens"):
        validate(cfg)


def test_mel_band_floor():
    cfg = ExperimentConfig()
    cfg.dims.n_mels = 16
    with pytest.raises(ConfigError, match="n_mels"):
        validate(cfg)


def test_corpus_and_dims_mel_counts_must_agree():
    cfg = ExperimentConfig()
    cfg.corpus.n_mels = 24
    with pytest.raises(ConfigError, match="corpus.n_mels"):
        validate(cfg)


def test_dot_path_overrides():
    cfg = ExperimentConfig()
    apply_overrides(cfg, ["transfer.lr=3e-4", "corpus.n_train=64",
                          "master_seed=9", "corpus.shuffle_l2=false"])
    assert cfg.transfer.lr == pytest.approx(3e-4)
    assert cfg.corpus.n_train == 64
    assert cfg.master_seed == 9
    assert cfg.corpus.shuffle_l2 is False


def test_override_unknown_key_names_the_path():
    cfg = ExperimentConfig()
    with pytest.raises(ConfigError, match="corpus.bogus"):
        apply_overrides(cfg, ["corpus.bogus=1"])


def test_override_requires_equals_sign():
    with pytest.raises(ConfigError, match="section.key=value"):
        apply_overrides(ExperimentConfig(), ["transfer.lr"])


def test_bad_value_type_is_reported_with_path():
    cfg = ExperimentConfig()
    with pytest.raises(ConfigError, match="corpus.n_train"):
        apply_overrides(cfg, ["corpus.n_train=many"])


def test_validation_errors_name_field_paths():
    cases = [
        ("corpus.match_fraction=1.5", "match_fraction"),
        ("corpus.rho=2", "rho"),
        ("transfer.lr=-1", "transfer.lr"),
        ("pretrain.steps=0", "pretrain.steps"),
        ("mode=banana", "mode"),
        ("flags.directions=sideways", "directions"),
    ]
    for override, needle in cases:
        cfg = ExperimentConfig()
        apply_overrides(cfg, [override])
        with pytest.raises(ConfigError, match=needle):
            validate(cfg)


def test_yaml_round_trip(tmp_path):
    cfg = ExperimentConfig()
    cfg.corpus.n_train = 123
    cfg.transfer.epochs = 4
    path = tmp_path / "cfg.yaml"
    config_mod.dump_config(cfg, path)
    loaded = config_mod.load_config(path)
    assert config_mod.to_mapping(loaded) == config_mod.to_mapping(cfg)


def test_missing_config_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        config_mod.load_config(tmp_path / "nope.yaml")


def test_invalid_yaml_is_a_config_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("corpus: [unclosed")
    with pytest.raises(ConfigError, match="YAML"):
        config_mod.load_config(path)


def test_output_root_env_override(monkeypatch):
    cfg = ExperimentConfig()
    monkeypatch.setenv(config_mod.OUTPUT_ROOT_ENV, "/somewhere/else")
    assert cfg.resolved_output_root() == "/somewhere/else"
    monkeypatch.delenv(config_mod.OUTPUT_ROOT_ENV)
    assert cfg.resolved_output_root() == cfg.output_root
