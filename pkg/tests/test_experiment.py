from pathlib import Path

import pytest

from app.core.exceptions import ArtifactError, ConfigParseError, ConfigValidationError
from app.db.artifacts import ArtifactStore
from app.main import main
from app.schemas.experiment import ExperimentConfig
from app.services.experiment_service import (
    aggregate_exit_code,
    export_report,
    load_config,
    run_experiment,
)
from app.schemas.report import TaskOutcome

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
CHECKS = ["absorbing_l2", "time_integrals", "h1_bound", "ut_bound", "tail", "h1_cauchy"]


def _quick(config_data):
    """Structure and simulate only."""
    config_data["tasks"]["estimates"]["enabled"] = False
    config_data["tasks"]["attractor"]["enabled"] = False
    return config_data


class TestExperimentConfig:
    """Test the experiment schema."""

    def test_defaults(self):
        """Empty blocks take the documented defaults."""
        cfg = ExperimentConfig.model_validate({"grid": {}, "model": {}, "forcing": {}})
        assert cfg.grid.N == 255 and cfg.grid.L == 8.0
        assert cfg.solver.dt == 0.01
        assert cfg.solver.slack_constant == 10.0
        assert cfg.tasks.estimates.eta == 1e-3
        assert cfg.tasks.estimates.checks == CHECKS
        assert cfg.seed == 0 and cfg.jobs == 1

    def test_untempered_forcing(self, config_data):
        config_data["forcing"]["rate"] = -0.6
        with pytest.raises(ConfigValidationError) as exc:
            ExperimentConfig.model_validate(config_data)
        assert any("temperedness" in v for v in exc.value.violations)
        assert exc.value.exit_code == 2

    def test_stability_margin(self, config_data):
        config_data["solver"]["dt"] = 1.0
        with pytest.raises(ConfigValidationError) as exc:
            ExperimentConfig.model_validate(config_data)
        assert any("stability margin" in v for v in exc.value.violations)

    def test_every_violation_listed(self, config_data):
        """All broken rules are reported together."""
        config_data["forcing"]["rate"] = -0.6
        config_data["solver"]["dt"] = 1.0
        with pytest.raises(ConfigValidationError) as exc:
            ExperimentConfig.model_validate(config_data)
        assert len(exc.value.violations) >= 2
        assert "temperedness" in exc.value.detail
        assert "stability margin" in exc.value.detail


class TestLoadConfig:
    """Test YAML loading."""

    def test_loads_file(self, write_config, config_data):
        cfg = load_config(write_config(config_data))
        assert cfg.grid.N == 63
        assert cfg.tasks.estimates.cauchy_pairs == [(6.0, 12.0)]

    def test_overrides(self, write_config, config_data):
        """Non-None overrides replace top-level keys."""
        cfg = load_config(write_config(config_data), {"seed": 7, "jobs": None, "output_dir": "x"})
        assert cfg.seed == 7
        assert cfg.jobs == 2
        assert cfg.output_dir == "x"

    def test_parse_error_has_line(self, write_config):
        with pytest.raises(ConfigParseError) as exc:
            load_config(write_config("grid:\n  n: 1\nmodel: a: b\n"))
        assert exc.value.line == 3
        assert exc.value.exit_code == 2

    def test_not_a_mapping(self, write_config):
        with pytest.raises(ConfigParseError):
            load_config(write_config("- 1\n- 2\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigParseError) as exc:
            load_config(tmp_path / "absent.yaml")
        assert "no such file" in exc.value.detail

    def test_unknown_key(self, write_config, config_data):
        """Misspelled keys are rejected with their location."""
        config_data["grid"]["size"] = 10
        with pytest.raises(ConfigValidationError) as exc:
            load_config(write_config(config_data))
        assert any(v.startswith("grid.size") for v in exc.value.violations)


class TestAggregateExitCode:
    """Test exit-code aggregation."""

    def test_highest_wins(self):
        outcomes = [
            TaskOutcome(name="a", status="passed", passed=True),
            TaskOutcome(name="b", status="failed", passed=False, exit_code=1),
            TaskOutcome(name="c", status="error", passed=False, exit_code=3),
        ]
        assert aggregate_exit_code(outcomes) == 3
        assert aggregate_exit_code(outcomes[:2]) == 1
        assert aggregate_exit_code([]) == 0


class TestRunExperiment:
    """Test end-to-end runs of the small experiment."""

    def test_full_run(self, small_config, tmp_path):
        """Every task passes and every checker writes one report."""
        manifest = run_experiment(small_config, tmp_path)
        assert manifest.exit_code == 0, [t for t in manifest.tasks if not t.passed]
        names = [t.name for t in manifest.tasks]
        assert names[:2] == ["verify-structure", "simulate"]
        assert [n for n in names if n.startswith("verify-estimates:")] == [
            f"verify-estimates:{c}" for c in CHECKS
        ]
        assert "attractor" in names and "attractor:invariance" in names
        store = ArtifactStore(tmp_path)
        for check in CHECKS:
            assert store.exists(f"estimates/{check}.json")
        assert store.exists("summary.txt")
        assert "summary.txt" in manifest.files
        assert store.read_json("manifest.json")["exit_code"] == 0

    def test_summary_has_one_row_per_checker(self, small_config, tmp_path):
        run_experiment(small_config, tmp_path)
        lines = (tmp_path / "summary.txt").read_text().splitlines()
        for check in CHECKS:
            assert sum(line.startswith(f"  {check} ") for line in lines) == 1

    def test_deterministic(self, config_data, tmp_path):
        """Same config and seed give byte-identical artifacts."""
        cfg = ExperimentConfig.model_validate(_quick(config_data))
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        a, b = ArtifactStore(tmp_path / "a"), ArtifactStore(tmp_path / "b")
        assert a.inventory() == b.inventory()
        for name in a.inventory():
            assert a.path(name).read_bytes() == b.path(name).read_bytes(), name

    def test_reused_directory_ignores_leftovers(self, config_data, tmp_path):
        """Files from an earlier run stay out of the manifest and the summary."""
        cfg = ExperimentConfig.model_validate(_quick(config_data))
        run_experiment(cfg, tmp_path / "clean")
        reused = tmp_path / "reused"
        (reused / "attractor").mkdir(parents=True)
        (reused / "attractor" / "member_9.csv").write_text("x,u\n", encoding="utf-8")
        (reused / "estimates").mkdir()
        (reused / "estimates" / "tail.json").write_text("{}", encoding="utf-8")
        manifest = run_experiment(cfg, reused)
        assert "attractor/member_9.csv" not in manifest.files
        assert "estimates/tail.json" not in manifest.files
        clean = ArtifactStore(tmp_path / "clean").read_json("manifest.json")
        assert manifest.files == clean["files"]
        assert (reused / "summary.txt").read_bytes() == (tmp_path / "clean" / "summary.txt").read_bytes()

    def test_failing_structure_keeps_running(self, config_data, tmp_path):
        """An inconsistent model fails verify-structure; simulate still runs."""
        config_data["model"] = {
            "kind": "power",
            "beta": -1.0,
            "alpha1": 1.0,
            "alpha2": 1.0,
            "alpha3": 1.0,
            "alpha4": 0.25,
            "alpha5": 0.25,
        }
        config_data["forcing"]["amplitude"] = 0.0
        config_data["tasks"]["simulate"]["t1"] = 1.0
        cfg = ExperimentConfig.model_validate(_quick(config_data))
        manifest = run_experiment(cfg, tmp_path)
        status = {t.name: t.status for t in manifest.tasks}
        assert status["verify-structure"] == "failed"
        assert status["simulate"] in ("passed", "failed")
        assert status["verify-estimates"] == "skipped"
        assert manifest.exit_code == 1
        report = ArtifactStore(tmp_path).read_json("structure/report.json")
        assert report["passed"] is False

    def test_task_subset(self, small_config, tmp_path):
        """Only the requested tasks run; no summary without the report step."""
        manifest = run_experiment(small_config, tmp_path, tasks=["simulate"], report=False)
        assert [t.name for t in manifest.tasks] == ["simulate"]
        assert not (tmp_path / "summary.txt").exists()
        assert (tmp_path / "simulate" / "metadata.json").exists()


class TestExportReport:
    """Test summary export."""

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ArtifactError) as exc:
            export_report(tmp_path)
        assert "manifest.json" in exc.value.missing
        assert exc.value.exit_code == 3

    def test_idempotent(self, config_data, tmp_path):
        run_experiment(ExperimentConfig.model_validate(_quick(config_data)), tmp_path)
        first = (tmp_path / "summary.txt").read_bytes()
        export_report(tmp_path)
        assert (tmp_path / "summary.txt").read_bytes() == first

    def test_missing_artifact(self, config_data, tmp_path):
        """A deleted artifact is listed after the summary is written."""
        run_experiment(ExperimentConfig.model_validate(_quick(config_data)), tmp_path)
        (tmp_path / "simulate" / "energy.json").unlink()
        with pytest.raises(ArtifactError) as exc:
            export_report(tmp_path)
        assert any("simulate/energy.json" in m for m in exc.value.missing)
        assert "Problems" in (tmp_path / "summary.txt").read_text()


class TestCommandLine:
    """Test the pullback-lab entry point."""

    def test_run(self, write_config, config_data, tmp_path):
        path = write_config(_quick(config_data))
        out = tmp_path / "out"
        assert main(["run", "--config", path, "--out", str(out)]) == 0
        assert (out / "summary.txt").exists()
        assert (out / "resolved_config.yaml").exists()

    def test_single_task(self, write_config, config_data, tmp_path):
        path = write_config(config_data)
        out = tmp_path / "out"
        assert main(["verify-structure", "--config", path, "--out", str(out)]) == 0
        assert (out / "structure" / "report.json").exists()
        assert not (out / "summary.txt").exists()

    def test_report_on_empty_directory(self, tmp_path):
        assert main(["report", "--out", str(tmp_path)]) == 3

    def test_invalid_config(self, write_config, config_data, tmp_path):
        config_data["forcing"]["rate"] = -0.6
        path = write_config(config_data)
        assert main(["run", "--config", path, "--out", str(tmp_path)]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_tampered_config(self, tmp_path):
        """The shipped inconsistent model exits with a failed check."""
        out = tmp_path / "tampered"
        assert main(["run", "--config", str(CONFIGS / "tampered.yaml"), "--out", str(out)]) == 1
        assert (out / "summary.txt").exists()


@pytest.mark.slow
class TestDeskScaleRuns:
    """Acceptance runs of the shipped experiments."""

    def test_default_experiment(self, tmp_path):
        assert main(["run", "--config", str(CONFIGS / "default.yaml"), "--out", str(tmp_path)]) == 0
        summary = (tmp_path / "summary.txt").read_text()
        assert "FAIL" not in summary

    def test_linear_stationary(self, tmp_path):
        out = str(tmp_path)
        assert main(["run", "--config", str(CONFIGS / "linear_stationary.yaml"), "--out", out]) == 0

    def test_zero_forcing(self, tmp_path):
        assert main(["run", "--config", str(CONFIGS / "zero_forcing.yaml"), "--out", str(tmp_path)]) == 0
