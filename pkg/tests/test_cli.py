"""Tests for the spin-decouple.py entry point."""

import json

import pytest

from lib.config import ConfigError
from lib.errors import AnalysisError, DomainError, NumericalError, TimingError


def run(cli_module, capsys, *argv):
    """Invoke main() and return (exit code, parsed stdout JSON)."""
    code = cli_module.main([str(a) for a in argv])
    return code, json.loads(capsys.readouterr().out)


DECAYING = {"t1_s": 1e-3}


class TestExitCodes:
    """Tests for exit_code_for and argument parsing."""

    @pytest.mark.parametrize("error, code", [
        (ConfigError("bad", "seed"), 2),
        (TimingError("bad"), 2),
        (DomainError("bad"), 2),
        (NumericalError("bad"), 3),
        (AnalysisError("bad"), 3),
    ])
    def test_maps_error_classes(self, cli_module, error, code):
        """Input problems exit 2, numerical and analysis failures exit 3."""
        assert cli_module.exit_code_for(error) == code

    def test_unknown_command_is_rejected(self, cli_module, tmp_path):
        """argparse refuses commands outside the table."""
        with pytest.raises(SystemExit):
            cli_module.main(["fit", "--config", str(tmp_path / "x.json")])

    def test_missing_config_exits_2(self, cli_module, capsys, tmp_path):
        """A config path that does not exist is an input error."""
        code, output = run(cli_module, capsys, "simulate", "--config", tmp_path / "absent.json", "--out", tmp_path)
        assert code == 2
        assert output["success"] is False
        assert output["error_type"] == "ConfigError"

    def test_invalid_config_reports_key_path(self, cli_module, capsys, write_config, tmp_path):
        """Validation errors carry the offending key to stdout."""
        path = write_config({"sequence.tau_us": -1.0})
        code, output = run(cli_module, capsys, "simulate", "--config", path, "--out", tmp_path / "out")
        assert code == 2
        assert output["key_path"] == "sequence.tau_us"

    @pytest.mark.parametrize("contents", [None, "{not json"], ids=["missing", "malformed"])
    def test_unreadable_global_config_exits_2(self, cli_module, capsys, write_config, tmp_path, mock_env, contents):
        """A missing or broken config.json is a config error, not a traceback."""
        root = tmp_path / "root"
        root.mkdir()
        if contents is not None:
            (root / "config.json").write_text(contents)
        mock_env(SPINSIM_ROOT=str(root))

        code, output = run(cli_module, capsys, "simulate", "--config", write_config(), "--out", tmp_path / "out")
        assert code == 2
        assert output["error_type"] == "ConfigError"
        assert output["key_path"] == "config.json"


class TestSimulate:
    """Tests for the simulate command."""

    def test_writes_train_and_metadata(self, cli_module, capsys, write_config, tmp_path):
        """simulate leaves echo_train.csv and metadata.json in --out."""
        out = tmp_path / "out"
        code, output = run(cli_module, capsys, "simulate", "--config", write_config(DECAYING), "--out", out)

        assert code == 0
        assert output["success"] is True
        assert output["n_samples"] == 16
        assert output["fit"]["model"] == "single_exp"
        assert output["fit"]["parameters"]["T2"] == pytest.approx(1e-3, rel=0.05)
        assert (out / "echo_train.csv").exists()
        metadata = json.loads((out / "metadata.json").read_text())
        assert metadata["config_hash"] == output["config_hash"]

    def test_is_deterministic(self, cli_module, capsys, write_config, tmp_path):
        """Two runs of one config produce byte-identical trains."""
        path = write_config(DECAYING)
        _, first = run(cli_module, capsys, "simulate", "--config", path, "--out", tmp_path / "a", "--workers", 2)
        _, second = run(cli_module, capsys, "simulate", "--config", path, "--out", tmp_path / "b")

        assert first["config_hash"] == second["config_hash"]
        assert (tmp_path / "a" / "echo_train.csv").read_text() == (tmp_path / "b" / "echo_train.csv").read_text()

    def test_seed_override_changes_hash(self, cli_module, capsys, write_config, tmp_path):
        """--seed-override is part of the run's identity."""
        path = write_config(DECAYING)
        _, base = run(cli_module, capsys, "simulate", "--config", path, "--out", tmp_path / "a")
        _, other = run(cli_module, capsys, "simulate", "--config", path, "--out", tmp_path / "b", "--seed-override", 99)
        assert base["config_hash"] != other["config_hash"]


class TestScan:
    """Tests for the scan command."""

    SCAN = {**DECAYING, "scan": {"axis": "cycle_time", "grid": [2.0, 5.0, 10.0]}}

    def test_requires_scan_section(self, cli_module, capsys, write_config, tmp_path):
        """Configs without a scan section are rejected."""
        code, output = run(cli_module, capsys, "scan", "--config", write_config(), "--out", tmp_path)
        assert code == 2
        assert output["key_path"] == "scan"

    def test_cycle_time_scan(self, cli_module, capsys, write_config, tmp_path):
        """T1-limited points give a flat T2 and a near-zero exponent."""
        out = tmp_path / "scan"
        code, output = run(cli_module, capsys, "scan", "--config", write_config(self.SCAN), "--out", out)

        assert code == 0
        assert output["n_points"] == 3
        assert output["summary"]["exponent"] == pytest.approx(0.0, abs=0.1)
        lines = (out / "scan_table.csv").read_text().splitlines()
        assert lines[0].startswith("# version=")
        assert len(lines) == 5
        assert all((out / f"point_{i:03d}" / "point.json").exists() for i in range(3))

    def test_rerun_reuses_points(self, cli_module, capsys, write_config, tmp_path, mocker):
        """A second run over the same --out does not simulate again."""
        out = tmp_path / "scan"
        path = write_config(self.SCAN)
        _, first = run(cli_module, capsys, "scan", "--config", path, "--out", out)

        spy = mocker.patch.object(cli_module, "run_point", side_effect=AssertionError("recomputed"))
        _, second = run(cli_module, capsys, "scan", "--config", path, "--out", out)

        spy.assert_not_called()
        assert second["summary"] == first["summary"]


class TestAht:
    """Tests for the aht command."""

    def test_bundled_triangle(self, cli_module, capsys, configs_dir, tmp_path):
        """Delta-pulse MREV-16 decouples the dipolar part with quadratic cycle error."""
        code, output = run(cli_module, capsys, "aht", "--config", configs_dir / "aht_checks.json", "--out", tmp_path)

        assert code == 0
        zero_order = output["decoupling"][0]
        assert zero_order["order"] == 0
        assert zero_order["dipolar_decoupled"] is True
        assert output["scaling"]["order_0"]["slope"] == pytest.approx(2.0, abs=0.4)
        assert output["scaling"]["dipolar_order_0"]["success"] is True
        for name in ("aht_report.csv", "aht_scaling.csv", "aht.json"):
            assert (tmp_path / name).exists()
        scaling_header = (tmp_path / "aht_scaling.csv").read_text().splitlines()[1]
        assert scaling_header.startswith("hamiltonian,reference_order")

    def test_reads_global_config_once(self, cli_module, capsys, configs_dir, tmp_path, mocker):
        """The system is realized from the config.json already loaded for the run."""
        spy = mocker.spy(cli_module, "load_global_config")
        code, _ = run(cli_module, capsys, "aht", "--config", configs_dir / "aht_checks.json", "--out", tmp_path)
        assert code == 0
        assert spy.call_count == 1

    def test_finite_pulses_exit_3(self, cli_module, capsys, write_config, tmp_path):
        """Toggling frames need delta pulses; the report says so."""
        code, output = run(cli_module, capsys, "aht", "--config", write_config({"sequence.pulse_width_us": 1.0}), "--out", tmp_path)
        assert code == 3
        assert output["success"] is False
        assert "delta pulses" in output["decoupling"][0]["error"]


class TestAnalyze:
    """Tests for the analyze command."""

    def test_reanalyzes_simulated_train(self, cli_module, capsys, write_config, tmp_path):
        """analyze reproduces the fit simulate stored."""
        path = write_config(DECAYING)
        _, simulated = run(cli_module, capsys, "simulate", "--config", path, "--out", tmp_path)
        code, analyzed = run(cli_module, capsys, "analyze", "--config", path, "--out", tmp_path)

        assert code == 0
        assert analyzed["fit"]["parameters"]["T2"] == pytest.approx(simulated["fit"]["parameters"]["T2"], rel=1e-9)
        assert (tmp_path / "fit.json").exists()

    def test_missing_train_exits_2(self, cli_module, capsys, write_config, tmp_path):
        """Nothing to analyze is an input error."""
        code, output = run(cli_module, capsys, "analyze", "--config", write_config(), "--out", tmp_path / "empty")
        assert code == 2
        assert output["key_path"] == "--train"
