import json

import pytest

from stepnft import config as config_mod
from stepnft.errors import ConfigurationError
from stepnft.training import TrainConfig

SAMPLE_INI = """
[env]
kind = bandit
reward = shaped
radius = 0.15

[solver]
steps = 6
sigma = 0.35
sampler = sde

[policy]
hidden = 32, 16
activation = relu

[train]
iterations = 25
learning_rate = 0.0005
seed = 7
record_timing = true

[sft]
steps = 0
"""


def write_ini(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


class TestParseConfig:
    def test_no_file_gives_defaults(self):
        assert config_mod.parse_config() == TrainConfig()

    def test_file_values_applied(self, tmp_path):
        cfg = config_mod.parse_config(write_ini(tmp_path, SAMPLE_INI))
        assert cfg.env == "bandit"
        assert cfg.reward_kind == "shaped"
        assert cfg.env_overrides == {"radius": 0.15}
        assert cfg.n_steps == 6
        assert cfg.sigma == 0.35
        assert cfg.hidden == (32, 16)
        assert cfg.activation == "relu"
        assert cfg.iterations == 25
        assert cfg.learning_rate == 0.0005
        assert cfg.seed == 7
        assert cfg.record_timing is True
        assert cfg.sft_steps == 0

    def test_overrides_beat_file(self, tmp_path):
        path = write_ini(tmp_path, SAMPLE_INI)
        cfg = config_mod.parse_config(path, overrides=["solver.steps=8", "train.seed=11"])
        assert cfg.n_steps == 8
        assert cfg.seed == 11
        assert cfg.sigma == 0.35

    def test_env_override_typing(self):
        cfg = config_mod.parse_config(overrides=[
            "env.radius=0.2", "env.horizon=9", "env.label=inner",
        ])
        assert cfg.env_overrides == {"radius": 0.2, "horizon": 9, "label": "inner"}

    def test_unknown_key_names_field(self, tmp_path):
        path = write_ini(tmp_path, "[train]\nlearning_rat = 0.1\n")
        with pytest.raises(ConfigurationError) as excinfo:
            config_mod.parse_config(path)
        assert excinfo.value.field == "train.learning_rat"

    def test_unknown_section_rejected(self, tmp_path):
        path = write_ini(tmp_path, "[surprise]\nx = 1\n")
        with pytest.raises(ConfigurationError):
            config_mod.parse_config(path)

    def test_default_section_rejected(self, tmp_path):
        path = write_ini(tmp_path, "[DEFAULT]\nseed = 1\n[train]\niterations = 2\n")
        with pytest.raises(ConfigurationError):
            config_mod.parse_config(path)

    def test_bad_literals_name_field(self):
        cases = [
            ("solver.steps=four", "solver.steps"),
            ("solver.sigma=big", "solver.sigma"),
            ("train.record_timing=maybe", "train.record_timing"),
            ("policy.hidden=,", "policy.hidden"),
        ]
        for override, field in cases:
            with pytest.raises(ConfigurationError) as excinfo:
                config_mod.parse_config(overrides=[override])
            assert excinfo.value.field == field

    def test_malformed_override_strings(self):
        with pytest.raises(ConfigurationError):
            config_mod.parse_config(overrides=["solver.steps"])
        with pytest.raises(ConfigurationError):
            config_mod.parse_config(overrides=["steps=4"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            config_mod.parse_config(tmp_path / "absent.ini")

    def test_semantic_validation_propagates(self):
        with pytest.raises(ConfigurationError) as excinfo:
            config_mod.parse_config(overrides=[
                "objective.target=stepwise", "solver.sampler=ode",
            ])
        assert excinfo.value.field == "objective.target"


class TestEchoAndHash:
    def test_echo_round_trip(self):
        cfg = TrainConfig(env="reach", n_steps=6, sigma=0.4, hidden=(48, 24),
                          env_overrides={"horizon": 12, "goal_radius": 0.3},
                          record_timing=True, sft_steps=0)
        assert config_mod.parse_echo(config_mod.config_echo(cfg)) == cfg

    def test_echo_covers_every_layout_key(self):
        echo = config_mod.config_echo(TrainConfig())
        assert set(echo) == set(config_mod._BY_LABEL)

    def test_float_echo_preserves_value(self):
        cfg = TrainConfig(learning_rate=3e-4, sigma=0.1 + 0.2)
        back = config_mod.parse_echo(config_mod.config_echo(cfg))
        assert back.learning_rate == 3e-4
        assert back.sigma == cfg.sigma

    def test_hash_stable_and_sensitive(self):
        base = TrainConfig()
        assert config_mod.config_hash(base) == config_mod.config_hash(TrainConfig())
        changed = base.replace(seed=1)
        assert config_mod.config_hash(base) != config_mod.config_hash(changed)

    def test_hash_ignores_echo_insertion_order(self):
        echo = config_mod.config_echo(TrainConfig())
        shuffled = dict(sorted(echo.items(), reverse=True))
        assert config_mod.hash_echo(echo) == config_mod.hash_echo(shuffled)


class TestManifest:
    def build(self):
        cfg = TrainConfig(iterations=3)
        return config_mod.build_manifest(
            command="train",
            config=cfg,
            seeds=[0, 1],
            artifacts={"metrics": "metrics.csv", "checkpoint": "checkpoint.ckpt"},
            started="2026-01-01T00:00:00+00:00",
            finished="2026-01-01T00:05:00+00:00",
        )

    def test_round_trip(self, tmp_path):
        manifest = self.build()
        path = tmp_path / "manifest.json"
        config_mod.write_manifest(manifest, path)
        loaded = config_mod.load_manifest(path)
        assert loaded == manifest
        assert loaded["command"] == "train"
        assert loaded["seeds"] == [0, 1]
        assert config_mod.parse_echo(loaded["config"]).iterations == 3

    def test_tampered_config_detected(self, tmp_path):
        manifest = self.build()
        manifest["config"]["train.iterations"] = "999"
        path = tmp_path / "manifest.json"
        with open(path, "w") as fh:
            json.dump(manifest, fh)
        with pytest.raises(ConfigurationError):
            config_mod.load_manifest(path)

    def test_unsupported_version(self):
        manifest = self.build()
        manifest["format_version"] = 99
        with pytest.raises(ConfigurationError):
            config_mod.verify_manifest(manifest)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError):
            config_mod.load_manifest(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigurationError):
            config_mod.load_manifest(tmp_path / "none.json")
