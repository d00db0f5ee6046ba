import json
import shutil
import subprocess
from pathlib import Path

import pytest

from ulmc_lab.harness import cli
from ulmc_lab.harness.config import ConfigError, validate_config
from ulmc_lab.harness.runner import RunError, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _cfg(obj):
    return validate_config(json.dumps(obj, indent=2))


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj, indent=2) if not isinstance(obj, str) else obj)
    return p


# ------------------------------------------------------------------ config


def test_minimal_config_fills_defaults():
    cfg = _cfg({"mode": "exact_oracle"})
    assert cfg.target["family"] == "gaussian" and cfg.target["params"] == [1.0]
    assert cfg.metric == "KL" and cfg.metric_tolerance() == pytest.approx(cfg.planner["eps"] ** 2)
    echo = cfg.to_dict()
    assert echo["mode"] == "exact_oracle" and echo["schema_version"] == 1


def test_negative_eps_names_the_field():
    with pytest.raises(ConfigError) as exc:
        _cfg({"mode": "exact_oracle", "planner": {"name": "kl_strongly_logconcave", "eps": -0.1}})
    assert any(e.startswith("planner.eps") for e in exc.value.errors)


def test_unknown_key_reported_with_location():
    text = '{\n  "mode": "sample",\n  "chainz": 10\n}'
    with pytest.raises(ConfigError) as exc:
        validate_config(text)
    assert exc.value.errors == ["chainz: unknown key (line 3, column 3)"]


def test_parse_error_has_line_and_column():
    with pytest.raises(ConfigError, match="line 2, column"):
        validate_config('{"mode": "sample",\n  oops}')


def test_unknown_family_diagnostic():
    with pytest.raises(ConfigError, match="unknown family 'banana'"):
        _cfg({"mode": "sample", "target": {"family": "banana", "dim": 2}})


def test_mode_and_preset_are_exclusive():
    with pytest.raises(ConfigError, match="exactly one"):
        _cfg({"seed": 1})
    with pytest.raises(ConfigError, match="preset"):
        _cfg({"mode": "sample", "preset": "acceptance/1"})
    assert _cfg({"preset": "acceptance/2"}).mode == "acceptance"


def test_manual_planner_needs_overrides():
    with pytest.raises(ConfigError, match="gamma, h"):
        _cfg({"mode": "sample", "planner": {"name": "manual"}, "overrides": {"N": 3}})


def test_scaling_study_needs_sweep():
    with pytest.raises(ConfigError, match="sweep"):
        _cfg({"mode": "scaling_study"})
    cfg = _cfg({"mode": "scaling_study", "sweep": {"axis": "d", "values": [1, 2]}})
    assert cfg.sweep["method"] == "fixed_h" and cfg.sweep["base"]["eps"] == 0.3


def test_explicit_step_wins_over_planner(tmp_path):
    cfg = _cfg({"mode": "exact_oracle", "overrides": {"h": 0.05}, "output": {"dir": str(tmp_path), "figures": False}})
    assert cfg.warnings and "overrides" in cfg.warnings[0]
    rep = run(cfg)
    assert rep.report["plan"]["h"] == 0.05
    assert any("explicit overrides" in w for w in rep.report["warnings"])


# ------------------------------------------------------------------ runs


def test_exact_oracle_gaussian_curve_ends_below_tolerance(tmp_path):
    cfg = validate_config((CONFIGS / "exact_oracle_gaussian.json").read_text())
    rep = run(cfg, tmp_path)
    assert rep.curves_header[:3] == ["step", "t", "kl"]
    kls = [r[2] for r in rep.curves]
    assert kls[-1] <= 0.09 and rep.passed and rep.exit_code == 0
    assert (tmp_path / "figures" / "exact_oracle.png").exists()


def test_sample_with_zero_steps_echoes_initialization(tmp_path):
    cfg = _cfg({
        "mode": "sample",
        "target": {"family": "gaussian", "dim": 2, "params": [1.0]},
        "planner": {"name": "manual"},
        "overrides": {"gamma": 2.0, "h": 0.1, "N": 0},
        "chains": 2000,
        "output": {"dir": str(tmp_path), "figures": False},
    })
    rep = run(cfg)
    assert rep.report["plan"]["N"] == 0
    assert [r[0] for r in rep.curves] == [0]
    assert rep.report["plan"]["init"]["position_variance"] == pytest.approx(1 / (2 + rep.report["plan"]["init"]["beta"]))


def test_exact_oracle_rejects_non_quadratic_target(tmp_path):
    cfg = _cfg({"mode": "exact_oracle", "target": {"family": "hyperbolic", "dim": 2}, "output": {"dir": str(tmp_path)}})
    with pytest.raises(RunError, match="quadratic"):
        run(cfg)


def test_condition_number_sweep_slope(tmp_path):
    rep = run(validate_config((CONFIGS / "scaling_condition.json").read_text()), tmp_path)
    slope = rep.report["results"]["slope"]
    assert 1.0 <= slope <= 1.5
    assert rep.passed


def test_bias_sweep_slope(tmp_path):
    rep = run(validate_config((CONFIGS / "scaling_bias.json").read_text()), tmp_path)
    assert rep.report["results"]["slope"] == pytest.approx(2.0, abs=0.2)


@pytest.mark.parametrize("name,axis", [("scaling_dimension.json", "d"), (None, "eps")])
def test_sweep_verdict_matches_declared_window(tmp_path, name, axis):
    # the slope claims themselves are judged in test_acceptance; here the
    # report must state the measured slope and a verdict consistent with it
    if name:
        cfg = validate_config((CONFIGS / name).read_text())
    else:
        cfg = _cfg({"mode": "scaling_study", "sweep": {"axis": "eps", "values": [0.4, 0.2, 0.1, 0.05], "base": {"d": 4}}})
    rep = run(cfg, tmp_path)
    chk = rep.report["checks"][0]
    lo, hi = {"d": (0.35, 0.65), "eps": (0.8, 1.2)}[axis]
    assert chk["passed"] == (lo <= chk["value"] <= hi)
    assert rep.exit_code == (0 if chk["passed"] else 2)
    if axis == "eps":
        assert rep.report["results"]["slope_vs_log_eps"] == pytest.approx(-chk["value"])


def test_acceptance_preset_runs(tmp_path):
    rep = run(validate_config((CONFIGS / "acceptance_2.json").read_text()), tmp_path)
    assert rep.passed and rep.report["results"]["id"] == 2


def test_excluded_preset_is_an_error(tmp_path):
    with pytest.raises(RunError, match="excluded"):
        run(_cfg({"preset": "acceptance/10"}), tmp_path)


# ------------------------------------------------------------------ determinism


def _sample_cfg(out, threads):
    return {
        "mode": "sample",
        "seed": 5,
        "threads": threads,
        "target": {"family": "gaussian_mixture", "dim": 2, "params": [0.5, 0.2]},
        "planner": {"name": "manual"},
        "overrides": {"gamma": 2.0, "h": 0.05, "N": 40},
        "chains": 3000,
        "output": {"dir": str(out), "trajectory": True, "figures": False},
    }


def test_outputs_byte_identical_across_threads_and_reruns(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b", tmp_path / "c"]
    for d, threads in zip(dirs, (1, 4, 1)):
        run(_cfg(_sample_cfg(d, threads)))
    for fname in ("report.json", "curves.csv", "trajectory.csv"):
        ref = (dirs[0] / fname).read_bytes()
        assert all((d / fname).read_bytes() == ref for d in dirs[1:]), fname
    other = _sample_cfg(tmp_path / "d", 1)
    other["seed"] = 6
    run(_cfg(other))
    assert (tmp_path / "d" / "curves.csv").read_bytes() != (dirs[0] / "curves.csv").read_bytes()


def test_output_file_formats(tmp_path):
    rep = run(_cfg(_sample_cfg(tmp_path, 1)))
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "# ulmc-lab-curves/1" and lines[1].split(",") == rep.curves_header
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema_version"] == 1 and report["software"]["name"] == "ulmc-lab"
    assert "threads" not in report["config"] and "dir" not in report["config"]["output"]
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert timing["wall_clock_seconds"] > 0


# ------------------------------------------------------------------ CLI


def test_cli_exit_zero_on_pass(tmp_path, capsys):
    code = cli.main(["run", str(CONFIGS / "exact_oracle_gaussian.json"), "--out", str(tmp_path), "--seed", "3"])
    out = capsys.readouterr().out
    assert code == 0 and "[PASS] final KL" in out
    assert json.loads((tmp_path / "report.json").read_text())["config"]["seed"] == 3


def test_cli_exit_two_on_failed_check(tmp_path, capsys):
    cfg = _write(tmp_path, {"mode": "exact_oracle", "overrides": {"N": 1}, "output": {"figures": False}})
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "[FAIL]" in capsys.readouterr().out


@pytest.mark.parametrize(
    "content,needle",
    [
        ({"mode": "sample", "target": {"family": "banana", "dim": 2}}, "unknown family"),
        ('{"mode": ', "parse error"),
        ({"mode": "exact_oracle", "target": {"family": "hyperbolic", "dim": 1}}, "quadratic"),
    ],
)
def test_cli_exit_one_on_errors(tmp_path, capsys, content, needle):
    cfg = _write(tmp_path, content)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert needle in capsys.readouterr().err


def test_cli_rejects_bad_flags_and_missing_file(tmp_path, capsys):
    cfg = _write(tmp_path, {"mode": "exact_oracle"})
    assert cli.main(["run", str(cfg), "--threads", "0"]) == 1
    assert cli.main(["run", str(cfg), "--seed", "-2"]) == 1
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 1
    assert "not found" in capsys.readouterr().err


def test_cli_presets_listing(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 10 and out[-1].startswith("acceptance/10\texcluded")


@pytest.mark.skipif(shutil.which("ulmc-lab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(
        ["ulmc-lab", "run", str(CONFIGS / "scaling_bias.json"), "--out", str(tmp_path), "--threads", "2"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "figures" / "scaling.png").exists()
