"""Tests for run configuration parsing, built-ins and digests."""

from pathlib import Path

import pytest

from indexnet.core.errors import ConfigError
from indexnet.core.nn_math import LossKind
from indexnet.core.optim import OptimizerKind
from indexnet.utils.config import RunConfig, builtin_names, load_config, read_config_text
from tests.conftest import tiny_config_dict


class TestRunConfig:
    def test_tiny_config(self, make_config):
        config = make_config()
        assert config.name == "tiny"
        assert config.network["kind"] == "fnn"
        assert config.loss.kind is LossKind.CROSS_ENTROPY
        assert config.optimizer.kind is OptimizerKind.ADAM
        assert config.optimizer.learning_rate == 0.01
        assert config.training.checkpoint_every == 2
        assert config.regularization.clip is None

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown sections: extras"):
            RunConfig.from_dict(tiny_config_dict(extras={}))

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="training: unknown keys warmup"):
            RunConfig.from_dict(tiny_config_dict(training={"warmup": 3}))

    def test_network_kind(self):
        with pytest.raises(ConfigError, match="network.kind"):
            RunConfig.from_dict(tiny_config_dict(network={"kind": "transformer"}))

    def test_optimizer_kind(self):
        with pytest.raises(ConfigError, match="optimizer"):
            RunConfig.from_dict(tiny_config_dict(optimizer={"kind": "lion"}))

    @pytest.mark.parametrize(
        "overrides",
        [
            {"training": {"epochs": 0}},
            {"data": {"source": "synthetic", "name": None}},
            {"data": {"source": "idx", "images": "x.idx"}},
            {"data": {"source": "delimited"}},
            {"data": {"source": "url"}},
            {"data": {"eval_fraction": 1.0}},
            {"gradcheck": {"step": 0.0}},
            {"regularization": {"clip": -1.0}},
            {"loss": {"kind": "binned_cross_entropy", "bins": 1}},
        ],
    )
    def test_invalid_sections(self, overrides):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(tiny_config_dict(**overrides))

    def test_not_a_mapping(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(["fnn"])

    def test_name_defaults_to_file_stem(self):
        raw = tiny_config_dict()
        del raw["name"]
        assert RunConfig.from_dict(raw, Path("runs/spiral.yaml")).name == "spiral"

    def test_to_dict_round_trip(self, make_config):
        config = make_config(regularization={"l2": 0.01})
        again = RunConfig.from_dict(config.to_dict())
        assert again.to_dict() == config.to_dict()


class TestDigest:
    def test_stable_hex(self, make_config):
        digest = make_config().digest()
        assert len(digest) == 64
        assert digest == make_config().digest()

    def test_training_settings_do_not_change_it(self, make_config):
        base = make_config().digest()
        assert make_config(optimizer={"lr": 0.5}, training={"epochs": 9}).digest() == base

    def test_network_changes_it(self, make_config):
        base = make_config().digest()
        assert make_config(network={"widths": [2, 8, 2]}).digest() != base
        assert make_config(loss={"kind": "mse"}).digest() != base

    def test_uses_batch_norm(self, make_config):
        assert not make_config().uses_batch_norm()
        assert make_config(network={"batch_norm": True}).uses_batch_norm()
        layers = [{"kind": "conv", "batch_norm": True}]
        assert make_config(network={"kind": "cnn", "layers": layers}).uses_batch_norm()


class TestLoading:
    def test_builtin_names(self):
        assert builtin_names() == ["charloop-lstm", "mnist-subset-lenet", "sine-rnn", "xor-fnn"]

    @pytest.mark.parametrize("name", ["charloop-lstm", "mnist-subset-lenet", "sine-rnn", "xor-fnn"])
    def test_builtins_validate(self, name):
        config = load_config(name)
        assert config.name == name
        assert config.source is None

    def test_seed_override(self):
        assert load_config("xor-fnn", seed=42).seed == 42

    def test_from_file(self, write_config):
        path = write_config("spiral", training={"epochs": 7})
        config = load_config(path)
        assert config.name == "spiral"
        assert config.training.epochs == 7
        assert config.source == path

    def test_relative_path_read_as_file(self, tmp_path, monkeypatch, write_config):
        write_config("xor-fnn", training={"epochs": 3})
        monkeypatch.chdir(tmp_path)
        text, source = read_config_text("xor-fnn.yaml")
        assert source == Path("xor-fnn.yaml")
        assert "epochs: 3" in text

    def test_unknown_name_lists_builtins(self):
        with pytest.raises(ConfigError, match="sine-rnn"):
            load_config("no-such-run")

    def test_unparsable_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("network: [fnn\n")
        with pytest.raises(ConfigError, match="cannot parse"):
            load_config(path)

    def test_dump_reloads(self, make_config, tmp_path):
        config = make_config(data={"eval_fraction": 0.25})
        path = config.dump(tmp_path / "config.yaml")
        assert load_config(path).to_dict() == config.to_dict()
