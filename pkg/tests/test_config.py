"""Tests for config loader module."""

import json
import math

import pytest

from lib.config import (
    ConfigError,
    ExperimentConfig,
    load_experiment_config,
    load_global_config,
    parse_experiment_config,
)


class TestLoadGlobalConfig:
    """Tests for load_global_config function."""

    def test_loads_config_from_root_env_var(self, tmp_path, mock_env):
        """Should load config.json from SPINSIM_ROOT."""
        (tmp_path / "config.json").write_text(json.dumps({"limits": {"max_spins": 6}}))
        mock_env(SPINSIM_ROOT=str(tmp_path))

        assert load_global_config()["limits"]["max_spins"] == 6

    def test_falls_back_to_repository_root(self, mock_env):
        """Without SPINSIM_ROOT the repository config.json is used."""
        mock_env(SPINSIM_ROOT=None)
        result = load_global_config()
        assert {"physics", "limits", "analysis", "execution"} <= set(result)

    def test_raises_on_missing_config_file(self, tmp_path, mock_env):
        """Should raise FileNotFoundError if config.json doesn't exist."""
        mock_env(SPINSIM_ROOT=str(tmp_path))
        with pytest.raises(FileNotFoundError):
            load_global_config()

    def test_raises_on_invalid_json(self, tmp_path, mock_env):
        """Should raise JSONDecodeError on malformed config."""
        (tmp_path / "config.json").write_text("{ invalid json }")
        mock_env(SPINSIM_ROOT=str(tmp_path))
        with pytest.raises(json.JSONDecodeError):
            load_global_config()


class TestParseExperimentConfig:
    """Tests for parse_experiment_config."""

    def test_parses_fixture(self, experiment_document, global_config):
        """The fixture document becomes a fully defaulted ExperimentConfig."""
        config = parse_experiment_config(experiment_document(), global_config)
        assert isinstance(config, ExperimentConfig)
        assert config.lattice.abundance == 1.0
        assert config.lattice.sites_nm[1] == (0.25, 0.0, 0.1)
        assert config.sequence.builder == "mrev16"
        assert config.sequence.cpmg.cycles_per_pi == 8
        assert config.sequence.cpmg.convention == "cpmg"
        assert config.sequence.sample_every == 1
        assert config.noise.kind == "none"
        assert config.analysis.zero_padding == global_config["analysis"]["zero_padding"]
        assert config.scan is None

    def test_field_direction_is_normalized(self, experiment_document, global_config):
        """Any nonzero direction is scaled to a unit vector."""
        document = experiment_document({"lattice.field_direction": [1, 1, 1]})
        direction = parse_experiment_config(document, global_config).lattice.field_direction
        assert direction == pytest.approx((1 / math.sqrt(3),) * 3)

    def test_comment_keys_are_ignored(self, experiment_document, global_config):
        """_comment keys are documentation, not schema violations."""
        document = experiment_document({"_comment": "note", "sequence._comment": "also a note"})
        parse_experiment_config(document, global_config)

    @pytest.mark.parametrize("overrides, key_path", [
        ({"sequence.bogus": 1}, "sequence.bogus"),
        ({"sequence.tau_us": None}, "sequence.tau_us"),
        ({"sequence.tau_us": -1.0}, "sequence.tau_us"),
        ({"sequence.pulse_width_us": 5.0}, "sequence.pulse_width_us"),
        ({"sequence.builder": "carr"}, "sequence.builder"),
        ({"sequence.cpmg.pi_amplitude_error": 2.0}, "sequence.cpmg.pi_amplitude_error"),
        ({"cluster.max_spins": 15}, "cluster.max_spins"),
        ({"cluster.origin": "edge"}, "cluster.origin"),
        ({"lattice.sites_nm": [[0, 0]]}, "lattice.sites_nm[0]"),
        ({"lattice.field_direction": [0, 0, 0]}, "lattice.field_direction"),
        ({"noise.kind": "ou", "noise.correlation_time_us": 10.0}, "noise.dt_noise_us"),
        ({"noise.kind": "rtn_bath", "noise.dt_noise_us": 1.0, "noise.rate_band_per_s": [5.0, 1.0]}, "noise.rate_band_per_s"),
        ({"noise.kind": "rtn_bath", "noise.dt_noise_us": 1.0}, "noise.n_fluctuators"),
        ({"analysis.method": "peak"}, "analysis.method"),
        ({"scan": {"axis": "cycle_time", "grid": [1.0, 2.0]}}, "scan.grid"),
        ({"scan": {"axis": "abundance", "grid": [0.1, 0.5, 1.5]}}, "scan.grid[2]"),
        ({"n_realizations": 0}, "n_realizations"),
        ({"seed": 1.5}, "seed"),
    ])
    def test_invalid_documents_name_the_key(self, experiment_document, global_config, overrides, key_path):
        """Every schema violation raises ConfigError with the offending key path."""
        with pytest.raises(ConfigError) as excinfo:
            parse_experiment_config(experiment_document(overrides), global_config)
        assert excinfo.value.key_path == key_path
        assert str(excinfo.value).startswith(key_path)

    def test_cap_comes_from_global_config(self, experiment_document, global_config):
        """A lower limits.max_spins tightens the cluster cap."""
        global_config["limits"]["max_spins"] = 1
        with pytest.raises(ConfigError) as excinfo:
            parse_experiment_config(experiment_document(), global_config)
        assert excinfo.value.key_path == "cluster.max_spins"


class TestExperimentConfig:
    """Tests for ExperimentConfig helpers."""

    def test_config_hash_is_stable_and_sensitive(self, experiment_document, global_config):
        """Same document, same hash; a changed seed changes it."""
        a = parse_experiment_config(experiment_document(), global_config)
        b = parse_experiment_config(experiment_document(), global_config)
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 64
        assert a.with_overrides(seed=99).config_hash() != a.config_hash()

    def test_with_overrides_keeps_other_fields(self, experiment_document, global_config):
        """None means 'leave as is'."""
        config = parse_experiment_config(experiment_document(), global_config)
        changed = config.with_overrides(seed=None, output_dir="elsewhere")
        assert changed.seed == config.seed
        assert changed.output_dir == "elsewhere"


class TestLoadExperimentConfig:
    """Tests for load_experiment_config."""

    def test_missing_file(self, tmp_path, global_config):
        """A missing file is a ConfigError, not a FileNotFoundError."""
        with pytest.raises(ConfigError, match="not found"):
            load_experiment_config(tmp_path / "absent.json", global_config)

    def test_invalid_json(self, tmp_path, global_config):
        """Malformed JSON is a ConfigError."""
        path = tmp_path / "broken.json"
        path.write_text("{ nope")
        with pytest.raises(ConfigError, match="Invalid JSON"):
            load_experiment_config(path, global_config)

    def test_round_trip_through_file(self, write_config, global_config):
        """A written document loads back to the same config."""
        config = load_experiment_config(write_config({"seed": 5}), global_config)
        assert config.seed == 5

    def test_bundled_configs_are_valid(self, configs_dir, global_config):
        """Every shipped experiment config passes validation."""
        paths = sorted(configs_dir.glob("*.json"))
        assert paths
        for path in paths:
            load_experiment_config(path, global_config)
