"""Config loading, validation, environment overrides."""

import json

import pytest

from avground.config import Config, apply_env_overrides, config_from_dict, load_config
from avground.errors import ConfigError


class TestDefaults:
    def test_default_config_validates(self):
        cfg = Config().validate()
        assert cfg.loss.tau == 0.07
        assert cfg.train.lr == 3e-4
        assert cfg.train.weight_decay == 1e-4
        assert cfg.train.epochs == 20
        assert cfg.train.batch_size == 16
        assert cfg.loss.area_pos_prior == 0.4
        assert cfg.loss.area_neg_prior == 0.0
        assert cfg.encoder.patch == 8

    def test_round_trip_through_dict(self):
        cfg = Config()
        clone = Config.from_dict(cfg.to_dict())
        assert clone.to_dict() == cfg.to_dict()


class TestLoading:
    def test_partial_file_fills_defaults(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"train": {"epochs": 3}}))
        cfg = load_config(path, use_env=False)
        assert cfg.train.epochs == 3
        assert cfg.train.batch_size == 16

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"optimizer": {}})

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"train": {"steps": 3}})

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json", use_env=False)

    def test_malformed_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path, use_env=False)


class TestValidation:
    def test_batch_of_one_rejected(self):
        cfg = Config()
        cfg.train.batch_size = 1
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_nonpositive_lr_tau_temperature_rejected(self):
        for mutate in (
            lambda c: setattr(c.train, "lr", 0.0),
            lambda c: setattr(c.loss, "tau", -1.0),
            lambda c: setattr(c.mask, "gumbel_temperature", 0.0),
        ):
            cfg = Config()
            mutate(cfg)
            with pytest.raises(ConfigError):
                cfg.validate()

    def test_image_size_must_tile_into_patches(self):
        cfg = Config()
        cfg.data.image_size = 90
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_area_priors_must_be_fractions(self):
        cfg = Config()
        cfg.loss.area_pos_prior = 1.2
        with pytest.raises(ConfigError):
            cfg.validate()


class TestEnvOverrides:
    def test_override_float_int_bool_and_none(self):
        cfg = apply_env_overrides(Config(), environ={
            "AVGROUND_TRAIN__LR": "0.001",
            "AVGROUND_TRAIN__EPOCHS": "7",
            "AVGROUND_TRAIN__LLM_ENABLED": "true",
            "AVGROUND_TRAIN__MAX_STEPS": "250",
        })
        assert cfg.train.lr == 0.001
        assert cfg.train.epochs == 7
        assert cfg.train.llm_enabled is True
        assert cfg.train.max_steps == 250.0

    def test_none_literal(self):
        cfg = Config()
        cfg.train.grad_clip = 1.0
        cfg = apply_env_overrides(cfg, environ={"AVGROUND_TRAIN__GRAD_CLIP": "none"})
        assert cfg.train.grad_clip is None

    def test_unrelated_variables_ignored(self):
        cfg = apply_env_overrides(Config(), environ={"PATH": "/bin", "HOME": "/root"})
        assert cfg.to_dict() == Config().to_dict()

    def test_malformed_and_unknown_overrides_rejected(self):
        for env in (
            {"AVGROUND_TRAINLR": "3"},
            {"AVGROUND_NOPE__LR": "3"},
            {"AVGROUND_TRAIN__NOPE": "3"},
            {"AVGROUND_TRAIN__EPOCHS": "many"},
            {"AVGROUND_TRAIN__LLM_ENABLED": "maybe"},
        ):
            with pytest.raises(ConfigError):
                apply_env_overrides(Config(), environ=env)

    def test_env_applies_on_top_of_file(self, tmp_path, monkeypatch):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"train": {"epochs": 3}}))
        monkeypatch.setenv("AVGROUND_TRAIN__EPOCHS", "9")
        cfg = load_config(path)
        assert cfg.train.epochs == 9
