import filecmp
import json
from pathlib import Path

import pytest

from ishii.cli import (
    ConfigError,
    build_problem,
    main,
    parse_config,
    serialize_config,
)

SMALL_TOY = """
[problem]
family = "pull_pull_toy"

[grid]
half_width = 1.0
spacing = 0.05

[solver]
tolerance = 1e-8

[run]
classes = ["minus", "plus"]
eta = [1.0, 0.25]
checks = ["ordering", "oracle", "masks"]
oracle_horizon = 5.0

[output]
directory = "out"
"""


def write_config(tmp_path, text=SMALL_TOY, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestConfigGrammar:
    def test_round_trip_identity_on_canonical_form(self):
        canon = parse_config(SMALL_TOY)
        assert parse_config(serialize_config(canon)) == canon

    def test_defaults_fill_missing_sections(self):
        canon = parse_config("")
        assert canon["grid"]["spacing"] == 0.01
        assert canon["run"]["checks"] == []

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[grid]\nwidth = 2.0\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[plotting]\nstyle = 1\n")

    def test_unknown_check_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[run]\nchecks = [\"made-up\"]\n")

    def test_family_parameters_accepted(self):
        canon = parse_config("""
[problem]
family = "superlinear"
power = 3.0
f1 = [0.0, 1.0]
discount = 1.0
""")
        spec = build_problem(canon)
        assert spec.family.power == 3.0

    def test_invalid_family_parameter_is_a_config_error(self):
        canon = parse_config("""
[problem]
family = "superlinear"
power = 0.5
""")
        with pytest.raises(ConfigError):
            build_problem(canon)


class TestRunCommand:
    def test_small_run_all_green(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "artifacts"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "value_minus.csv").exists()
        assert (out / "value_plus.csv").exists()
        assert (out / "value_eta_1.csv").exists()
        assert (out / "value_eta_0.25.csv").exists()
        assert (out / "report.csv").exists()
        assert "FAIL" not in (out / "summary.txt").read_text()
        meta = json.loads((out / "value_minus.meta.json").read_text())
        assert meta["class"] == "minus" and meta["converged"] is True

    def test_empty_run_section_exits_zero(self, tmp_path):
        cfg = write_config(tmp_path, """
[run]
classes = []

[grid]
spacing = 0.1
""")
        out = tmp_path / "empty"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert "no checks" in (out / "summary.txt").read_text()

    def test_misaligned_grid_is_a_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "[grid]\nspacing = 0.3\n")
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
        assert "grid" in capsys.readouterr().err

    def test_missing_config_is_a_config_error(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.toml")]) == 1

    def test_verification_failure_exits_three(self, tmp_path):
        # a coefficient far above its admissible growth breaks the barrier check
        cfg = write_config(tmp_path, """
[problem]
family = "superlinear"
d1 = [10.0]
d2 = [10.0]

[grid]
spacing = 0.25

[run]
classes = []
checks = ["psi"]
""")
        out = tmp_path / "fail3"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 3
        assert "FAIL" in (out / "summary.txt").read_text()

    def test_solver_failure_exits_two(self, tmp_path):
        cfg = write_config(tmp_path, """
[grid]
spacing = 0.05

[solver]
max_iterations = 3

[run]
classes = ["minus"]
""")
        out = tmp_path / "fail2"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
        assert (out / "FAILED").exists()

    def test_repeat_runs_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["run", "--config", str(cfg), "--out", str(out2)]) == 0
        names = sorted(p.name for p in out1.iterdir())
        assert names == sorted(p.name for p in out2.iterdir())
        match, mismatch, errors = filecmp.cmpfiles(out1, out2, names, shallow=False)
        assert not mismatch and not errors


class TestSubcommands:
    def test_solve_writes_one_function(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "solve"
        assert main(["solve", "--config", str(cfg), "--out", str(out),
                     "--klass", "eta", "--eta", "0.5", "--m", "1.0"]) == 0
        assert (out / "value_eta_0.5.csv").exists()

    def test_trajectory_has_interface_rows(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "traj"
        assert main(["trajectory", "--config", str(cfg), "--out", str(out),
                     "--x0", "0.5", "--policy", "slide-test", "--horizon", "2.0",
                     "--dt", "0.05"]) == 0
        text = (out / "trajectory_slide-test.csv").read_text()
        assert "interface" in text and text.startswith("t,x_1,")

    def test_eta_sweep_table_is_monotone(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "etasweep"
        assert main(["sweep-eta", "--config", str(cfg), "--out", str(out),
                     "--etas", "1,0.5,0.25,0.125"]) == 0
        rows = (out / "sweep_eta.csv").read_text().strip().splitlines()[1:]
        gaps = [float(r.split(",")[1]) for r in rows]
        assert all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] <= 5 * 0.05

    def test_eps_sweep_writes_table(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "epssweep"
        assert main(["sweep-eps", "--config", str(cfg), "--out", str(out),
                     "--eps", "0.4,0.2"]) == 0
        assert (out / "sweep_eps.csv").read_text().count("\n") == 3

    def test_m_sweep_reports(self, tmp_path):
        # superlinear cost: optimal controls stay bounded, so the sweep saturates
        cfg = write_config(tmp_path, """
[problem]
family = "superlinear"
discount = 4.0
f1 = [0.0, 1.0]
f2 = [0.0, 1.0]

[grid]
spacing = 0.1

[solver]
tolerance = 1e-8
radial_resolution = 4
""")
        out = tmp_path / "msweep"
        assert main(["sweep-m", "--config", str(cfg), "--out", str(out),
                     "--ms", "2,4,8"]) == 0
        assert (out / "sweep_m_report.csv").exists()

    def test_m_sweep_detects_non_saturating_family(self, tmp_path):
        # the toy's linear cost keeps faster controls profitable: honest failure
        cfg = write_config(tmp_path)
        out = tmp_path / "msweep_toy"
        assert main(["sweep-m", "--config", str(cfg), "--out", str(out),
                     "--ms", "1,2"]) == 3

    def test_unknown_policy_is_a_config_error(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["trajectory", "--config", str(cfg), "--out",
                     str(tmp_path / "p"), "--policy", "warp"]) == 1


def test_shipped_config_parses():
    shipped = Path(__file__).resolve().parents[1] / "configs" / "toy_pullpull.toml"
    canon = parse_config(shipped.read_text())
    assert canon["problem"]["family"] == "pull_pull_toy"
    assert canon["run"]["epsilon"] == [0.4, 0.2, 0.1, 0.05]
