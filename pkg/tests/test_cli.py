import csv
import json
import shutil
import subprocess

import pytest

from homoglab import McSummary, SolverError
from homoglab.cli import config_from_dict, parse_config, run
from homoglab.errors import ConfigurationError

SMALL_SCALING = {
    "dim": 2,
    "n": 65,
    "epsilons": [0.5, 0.25, 0.125],
    "n_realizations": 8,
    "base_seed": 99,
    "threads": 1,
}

SMALL_DISTRIBUTION = {
    "dim": 2,
    "n": 65,
    "epsilons": [0.125],
    "n_realizations": 32,
    "base_seed": 424,
    "observable": "corrector",
}


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TestParseConfig:
    def test_minimal_config_fills_defaults(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, {}))
        assert cfg.dim == 2
        assert cfg.n == 65
        assert cfg.model.kind == "short_range"
        assert cfg.nonlinearity.name == "bistable"

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"n_realisations": 10})
        with pytest.raises(ConfigurationError, match="n_realisations"):
            parse_config(path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"model": {"kind": "short_range", "amp": 1}})
        with pytest.raises(ConfigurationError, match="amp"):
            parse_config(path)

    def test_nondecreasing_epsilons_named(self, tmp_path):
        path = write_config(tmp_path, {"epsilons": [0.125, 0.25]})
        with pytest.raises(ConfigurationError, match="epsilons"):
            parse_config(path)

    def test_parse_error_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  broken\n}", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="line 2"):
            parse_config(path)

    def test_override_dot_path(self, tmp_path):
        path = write_config(tmp_path, SMALL_SCALING)
        cfg = parse_config(path, ["model.amplitude=0.25", "base_seed=7"])
        assert cfg.model.amplitude == 0.25
        assert cfg.base_seed == 7

    def test_override_amplitude_zero_accepted(self, tmp_path):
        path = write_config(tmp_path, SMALL_SCALING)
        cfg = parse_config(path, ["model.amplitude=0"])
        assert cfg.model.amplitude == 0.0

    def test_malformed_override(self, tmp_path):
        path = write_config(tmp_path, SMALL_SCALING)
        with pytest.raises(ConfigurationError, match="key=value"):
            parse_config(path, ["model.amplitude"])

    def test_resolution_rule_named(self, tmp_path):
        path = write_config(tmp_path, {"n": 17, "epsilons": [0.25]})
        with pytest.raises(ConfigurationError, match="resolution"):
            parse_config(path)


class TestRunExitCodes:
    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = run(["scaling", "--config", str(tmp_path / "nope.json")])
        assert code == 2
        assert "configuration error" in capsys.readouterr().err

    def test_invalid_config_exits_2(self, tmp_path):
        path = write_config(tmp_path, {"epsilons": [0.1, 0.2]})
        assert run(["scaling", "--config", str(path)]) == 2

    def test_solver_error_exits_3(self, tmp_path, monkeypatch):
        import homoglab.cli as cli_mod

        path = write_config(tmp_path, SMALL_SCALING)

        def boom(cfg):
            raise SolverError("synthetic failure, seed 12")

        monkeypatch.setattr(cli_mod.mc, "run_scaling_study", boom)
        assert run(["scaling", "--config", str(path), "--out", str(tmp_path)]) == 3

    def test_assert_band_violation_exits_4(self, tmp_path):
        path = write_config(tmp_path, SMALL_DISTRIBUTION)
        out = tmp_path / "out"
        code = run(
            ["distribution", "--config", str(path), "--out", str(out),
             "--assert", "--set", "bands.ks_max=1e-9"]
        )
        assert code == 4

    def test_assert_pass_exits_0(self, tmp_path):
        path = write_config(tmp_path, SMALL_DISTRIBUTION)
        out = tmp_path / "out"
        code = run(
            ["distribution", "--config", str(path), "--out", str(out),
             "--assert", "--set", "bands.ks_max=1.0",
             "--set", "bands.variance_ratio_low=0.01",
             "--set", "bands.variance_ratio_high=100",
             "--set", "bands.skewness_max=10", "--set", "bands.excess_kurtosis_max=10"]
        )
        assert code == 0


class TestScalingCommand:
    def test_end_to_end(self, tmp_path):
        path = write_config(tmp_path, SMALL_SCALING)
        out = tmp_path / "out"
        assert run(["scaling", "--config", str(path), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert "fitted_slope" in summary
        assert summary["kind"] == "scaling"
        rows = read_csv(out / "per_epsilon.csv")
        assert rows[0] == ["epsilon", "mean_sq_error", "std_error", "mean_linf",
                           "n_realizations"]
        assert len(rows) == 1 + len(SMALL_SCALING["epsilons"])

    def test_degenerate_override(self, tmp_path):
        path = write_config(tmp_path, SMALL_SCALING)
        out = tmp_path / "degen"
        code = run(["scaling", "--config", str(path), "--out", str(out),
                    "--set", "model.amplitude=0"])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["degenerate"] is True

    def test_summary_round_trips(self, tmp_path):
        path = write_config(tmp_path, SMALL_SCALING)
        out = tmp_path / "rt"
        run(["scaling", "--config", str(path), "--out", str(out)])
        doc = json.loads((out / "summary.json").read_text())
        summary = McSummary.from_dict(doc)
        assert summary.to_dict() == doc


class TestDistributionCommand:
    def test_samples_csv_schema(self, tmp_path):
        path = write_config(tmp_path, SMALL_DISTRIBUTION)
        out = tmp_path / "out"
        assert run(["distribution", "--config", str(path), "--out", str(out)]) == 0
        rows = read_csv(out / "samples.csv")
        assert rows[0] == ["realization_index", "seed", "x_value"]
        assert len(rows) == 1 + SMALL_DISTRIBUTION["n_realizations"]
        indices = [int(r[0]) for r in rows[1:]]
        assert indices == sorted(indices)


class TestOtherCommands:
    def test_solve_writes_solution_and_fields(self, tmp_path):
        path = write_config(tmp_path, SMALL_SCALING)
        out = tmp_path / "out"
        assert run(["solve", "--config", str(path), "--out", str(out)]) == 0
        doc = json.loads((out / "solution.json").read_text())
        assert doc["epsilon"] == 0.125
        assert doc["norms"]["expansion_identity_l2"] < 1e-8
        rows = read_csv(out / "fields.csv")
        assert rows[0] == ["index", "x1", "x2", "u_eps", "u", "xi"]
        assert len(rows) == 1 + 63 * 63

    def test_green_column_output(self, tmp_path):
        path = write_config(tmp_path, SMALL_SCALING)
        out = tmp_path / "out"
        assert run(["green", "--config", str(path), "--out", str(out)]) == 0
        rows = read_csv(out / "green.csv")
        assert rows[0] == ["index", "x1", "x2", "value"]
        values = [float(r[3]) for r in rows[1:]]
        assert max(values) > 0
        assert min(values) >= -1e-10 * max(values)

    def test_field_check_output(self, tmp_path):
        path = write_config(tmp_path, dict(SMALL_SCALING, n_realizations=64))
        out = tmp_path / "out"
        assert run(["field-check", "--config", str(path), "--out", str(out)]) == 0
        rows = read_csv(out / "field_check.csv")
        assert rows[0] == ["check", "detail", "estimate", "std_error", "reference"]
        checks = {r[0] for r in rows[1:]}
        assert checks == {"correlation", "fourth_moment"}
        # lag-zero correlation row should sit near its reference a^2
        lag0 = next(r for r in rows[1:] if r[1] == "lag=0/0")
        assert abs(float(lag0[2]) - float(lag0[4])) <= 4 * float(lag0[3])


class TestDeterminism:
    def test_threads_do_not_change_outputs(self, tmp_path):
        path = write_config(tmp_path, SMALL_SCALING)
        outputs = {}
        for threads in (1, 2):
            out = tmp_path / f"t{threads}"
            assert run(["scaling", "--config", str(path), "--out", str(out),
                        "--threads", str(threads)]) == 0
            outputs[threads] = (
                (out / "summary.json").read_bytes(),
                (out / "per_epsilon.csv").read_bytes(),
            )
        assert outputs[1] == outputs[2]

    def test_homog_threads_env_default(self, tmp_path, monkeypatch):
        # an invalid env value must surface as a config error, proving the
        # variable feeds the threads default
        path = write_config(tmp_path, SMALL_SCALING)
        monkeypatch.setenv("HOMOG_THREADS", "0")
        assert run(["scaling", "--config", str(path), "--out", str(tmp_path)]) == 2
        monkeypatch.setenv("HOMOG_THREADS", "2")
        out = tmp_path / "env_out"
        assert run(["scaling", "--config", str(path), "--out", str(out)]) == 0

    def test_console_script_smoke(self, tmp_path):
        exe = shutil.which("homoglab")
        if exe is None:
            pytest.skip("console script not on PATH")
        path = write_config(tmp_path, SMALL_DISTRIBUTION)
        out = tmp_path / "cli"
        proc = subprocess.run(
            [exe, "distribution", "--config", str(path), "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "summary.json").exists()
