import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from ruamel.yaml import YAML
from ruamel.yaml.error import MarkedYAMLError, YAMLError

from app.core.config import settings
from app.core.exceptions import (
    EXIT_CHECK_FAILED,
    EXIT_OK,
    EXIT_RUNTIME_ERROR,
    ArtifactError,
    ConfigParseError,
    ConfigValidationError,
    LabException,
)
from app.db.artifacts import ArtifactStore
from app.models.attractor import Norm
from app.schemas.experiment import ExperimentConfig
from app.schemas.report import EstimateReport, RunManifest, TaskOutcome
from app.services import (
    attractor_service,
    energy_service,
    estimate_service,
    model_service,
    solver_service,
)
from app.services.context_service import ExperimentContext, build_context

logger = logging.getLogger(__name__)

TASK_ORDER = ("verify-structure", "simulate", "verify-estimates", "attractor")
REQUIRED_ARTIFACTS = ("manifest.json", "resolved_config.yaml")
SUMMARY = "summary.txt"

TaskResult = Tuple[bool, List[str]]


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Parse and validate an experiment file.

    Args:
        path: YAML experiment file
        overrides: Top-level keys (``output_dir``, ``seed``, ``jobs``) replacing
            the file's values; None entries are ignored

    Returns:
        Validated ExperimentConfig with defaults filled

    Raises:
        ConfigParseError: If the file is missing or is not a YAML mapping
        ConfigValidationError: Listing every violated rule
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigParseError(str(path), None, "no such file")
    yaml = YAML(typ="safe", pure=True)
    try:
        data = yaml.load(path.read_text(encoding="utf-8"))
    except MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ConfigParseError(str(path), line, e.problem or str(e))
    except YAMLError as e:
        raise ConfigParseError(str(path), None, str(e))
    if not isinstance(data, dict):
        raise ConfigParseError(str(path), None, "top level must be a mapping of blocks")

    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigValidationError(
            f"{'.'.join(str(part) for part in err['loc']) or 'config'}: {err['msg']}"
            for err in e.errors()
        )
    logger.info(f"Loaded experiment config {path}")
    return cfg


def output_directory(cfg: ExperimentConfig, out_dir=None) -> Path:
    return Path(out_dir or cfg.output_dir or settings.DEFAULT_OUTPUT_DIR)


def _outcome(name: str, fn: Callable[[], TaskResult]) -> TaskOutcome:
    logger.info(f"Task {name} started")
    try:
        passed, artifacts = fn()
    except LabException as e:
        logger.error(f"Task {name} failed: {e.detail}")
        return TaskOutcome(
            name=name, status="error", passed=False, exit_code=e.exit_code, error=e.detail
        )
    except Exception as e:
        logger.exception(f"Task {name} crashed")
        return TaskOutcome(
            name=name,
            status="error",
            passed=False,
            exit_code=EXIT_RUNTIME_ERROR,
            error=f"{type(e).__name__}: {e}",
        )
    status = "passed" if passed else "failed"
    logger.info(f"Task {name} {status}")
    return TaskOutcome(
        name=name,
        status=status,
        passed=passed,
        exit_code=EXIT_OK if passed else EXIT_CHECK_FAILED,
        artifacts=artifacts,
    )


def _skipped(name: str) -> TaskOutcome:
    logger.info(f"Task {name} disabled in config")
    return TaskOutcome(name=name, status="skipped", passed=True)


def aggregate_exit_code(outcomes: Sequence[TaskOutcome]) -> int:
    """Runtime errors dominate config errors, which dominate failed checks."""
    return max((o.exit_code for o in outcomes), default=EXIT_OK)


def _structure_task(ctx: ExperimentContext, store: ArtifactStore) -> TaskResult:
    block = ctx.config.tasks.verify_structure
    report = model_service.verify_structure(
        ctx.model, ctx.grid, (block.s_min, block.s_max), block.samples
    )
    payload = {**report.model_dump(), "passed": report.passed}
    return report.passed, [store.write_json("structure/report.json", payload)]


def _simulate_task(ctx: ExperimentContext, store: ArtifactStore) -> TaskResult:
    block = ctx.config.tasks.simulate
    u0 = attractor_service.sample_family(ctx.family, ctx.grid, block.t0, 1, lam=ctx.lam)[0]
    controls = replace(ctx.controls, monitor_energy=True)
    traj = solver_service.evolve(
        ctx.model, ctx.forcing, ctx.grid, u0, block.t0, block.t1, controls
    )
    written = solver_service.export_trajectory(traj, store)
    residual = traj.diagnostics.residual
    slack = energy_service.energy_slack(ctx.forcing, traj, ctx.slack_constant)
    violations = int(np.count_nonzero(residual > slack))
    written.append(
        store.write_json(
            "simulate/energy.json",
            {
                "steps": int(residual.size),
                "violations": violations,
                "max_residual": float(np.max(residual)) if residual.size else 0.0,
                "max_residual_over_slack": float(np.max(residual / slack)) if residual.size else 0.0,
                "slack_constant": ctx.slack_constant,
                "passed": violations == 0,
            },
        )
    )
    return violations == 0, written


def _checker(ctx: ExperimentContext, name: str) -> Callable[[], EstimateReport]:
    block = ctx.config.tasks.estimates
    tau = block.tau
    horizons = list(block.horizons)
    checkers: Dict[str, Callable[[], EstimateReport]] = {
        "absorbing_l2": lambda: estimate_service.check_absorbing_L2(ctx, tau, horizons),
        "time_integrals": lambda: estimate_service.check_time_integrals(ctx, tau, horizons[-1]),
        "h1_bound": lambda: estimate_service.check_H1_bound(ctx, tau, horizons),
        "ut_bound": lambda: estimate_service.check_ut_bound(ctx, tau, horizons),
        "tail": lambda: estimate_service.check_tail(ctx, tau, block.eta, horizons, block.radii),
        "h1_cauchy": lambda: estimate_service.check_h1_cauchy(ctx, tau, block.cauchy_pairs),
    }
    return checkers[name]


def _estimate_tasks(ctx: ExperimentContext, store: ArtifactStore) -> List[TaskOutcome]:
    outcomes = []
    for name in ctx.config.tasks.estimates.checks:
        run = _checker(ctx, name)

        def task(run=run, name=name) -> TaskResult:
            report = run()
            return report.passed, [store.write_json(f"estimates/{name}.json", report.model_dump())]

        outcomes.append(_outcome(f"verify-estimates:{name}", task))
    return outcomes


def _attractor_tasks(ctx: ExperimentContext, store: ArtifactStore) -> List[TaskOutcome]:
    block = ctx.config.tasks.attractor
    state: Dict[str, Any] = {}

    def approximate() -> TaskResult:
        approx = attractor_service.approximate_attractor(
            ctx, block.tau, block.ladder, tol=block.tol
        )
        state["approx"] = approx
        return approx.converged, attractor_service.save_attractor(approx, store)

    outcomes = [_outcome("attractor", approximate)]
    approx = state.get("approx")
    if approx is None:
        return outcomes

    def invariance() -> TaskResult:
        report = attractor_service.check_invariance(
            ctx, approx, block.invariance_shift, block.invariance_tol, block.invariance_fraction
        )
        return report.passed, [store.write_json("attractor/invariance.json", report.model_dump())]

    outcomes.append(_outcome("attractor:invariance", invariance))

    family = ctx.anchored(block.tau)
    for norm in (Norm.L2, Norm.H1):

        def attraction(norm=norm) -> TaskResult:
            report = attractor_service.check_attraction(
                ctx, approx, family, block.attraction_horizons, norm, block.attraction_tol
            )
            name = f"attractor/attraction_{norm.value}.json"
            return report.passed, [store.write_json(name, report.model_dump())]

        outcomes.append(_outcome(f"attractor:attraction_{norm.value}", attraction))

    if block.extra_seeds:

        def seeds() -> TaskResult:
            report = attractor_service.seed_independence(
                ctx, block.tau, block.ladder, [ctx.seed] + list(block.extra_seeds), block.tol
            )
            return report.passed, [
                store.write_json("attractor/seed_independence.json", report.model_dump())
            ]

        outcomes.append(_outcome("attractor:seed_independence", seeds))
    return outcomes


def _write_manifest(
    store: ArtifactStore,
    cfg: ExperimentConfig,
    outcomes: List[TaskOutcome],
    extra: Sequence[str] = (),
) -> RunManifest:
    """Lists the files written by this run; leftovers already in the directory are ignored."""
    files = set(REQUIRED_ARTIFACTS) | set(extra)
    for outcome in outcomes:
        files.update(outcome.artifacts)
    manifest = RunManifest(
        app_version=settings.APP_VERSION,
        seed=cfg.seed,
        tasks=outcomes,
        exit_code=aggregate_exit_code(outcomes),
        files=sorted(files),
    )
    store.write_json("manifest.json", manifest.model_dump())
    return manifest


def run_experiment(
    cfg: ExperimentConfig,
    out_dir=None,
    tasks: Optional[Sequence[str]] = None,
    report: bool = True,
) -> RunManifest:
    """
    Run the requested tasks in order and write every artifact.

    A failing or crashing task is recorded and the remaining tasks still run.

    Args:
        cfg: Validated config
        out_dir: Artifact directory; defaults to cfg.output_dir then the settings default
        tasks: Subset of TASK_ORDER to run; all when None (disabled tasks are skipped)
        report: Write summary.txt after the tasks

    Returns:
        RunManifest; its exit_code is 3 on any runtime error, else 1 on any
        failed check, else 0
    """
    store = ArtifactStore(output_directory(cfg, out_dir))
    selected = set(TASK_ORDER if tasks is None else tasks)
    store.write_yaml("resolved_config.yaml", cfg.model_dump(mode="json"))
    ctx = build_context(cfg)
    blocks = cfg.tasks

    outcomes: List[TaskOutcome] = []
    if "verify-structure" in selected:
        if blocks.verify_structure.enabled:
            outcomes.append(_outcome("verify-structure", lambda: _structure_task(ctx, store)))
        else:
            outcomes.append(_skipped("verify-structure"))
    if "simulate" in selected:
        if blocks.simulate.enabled:
            outcomes.append(_outcome("simulate", lambda: _simulate_task(ctx, store)))
        else:
            outcomes.append(_skipped("simulate"))
    if "verify-estimates" in selected:
        if blocks.estimates.enabled:
            outcomes.extend(_estimate_tasks(ctx, store))
        else:
            outcomes.append(_skipped("verify-estimates"))
    if "attractor" in selected:
        if blocks.attractor.enabled:
            outcomes.extend(_attractor_tasks(ctx, store))
        else:
            outcomes.append(_skipped("attractor"))

    manifest = _write_manifest(store, cfg, outcomes)
    if report:
        outcome = _outcome("report", lambda: (True, [export_report(store.root)]))
        if outcome.status == "error":
            outcomes.append(outcome)
        extra = [SUMMARY] if store.exists(SUMMARY) else []
        manifest = _write_manifest(store, cfg, outcomes, extra)
    logger.info(f"Artifacts in {store.root} (exit code {manifest.exit_code})")
    return manifest


def _number(value: Any) -> str:
    if isinstance(value, str):
        return value
    if value is None:
        return "-"
    return f"{float(value):.6e}"


def _worst_row(rows: List[Dict[str, Any]]) -> Optional[Dict[str, Any]]:
    finite = [r for r in rows if not isinstance(r["margin"], str)]
    if not finite:
        return rows[0] if rows else None
    return min(finite, key=lambda r: r["margin"] + (0.0 if isinstance(r["slack"], str) else r["slack"]))


def _estimate_lines(payload: Dict[str, Any]) -> str:
    row = _worst_row(payload.get("rows", []))
    if row is None:
        return f"  {payload['tag']:<16}{'(no rows)':>15}"
    return (
        f"  {payload['tag']:<16}{_number(row['horizon']):>15}{_number(row['bound']):>15}"
        f"{_number(row['observed']):>15}{_number(row['margin']):>15}"
        f"  {'pass' if payload['passed'] else 'FAIL'}"
        f"  T={_number(payload.get('first_passing_horizon'))}"
    )


def export_report(artifact_dir) -> str:
    """
    Write summary.txt from the artifacts of a run.

    The summary is rebuilt from the files alone, so exporting twice gives the
    same bytes.

    Returns:
        Relative path of the summary

    Raises:
        ArtifactError: If required files are missing, or after writing the
            summary when listed artifacts are missing or corrupt
    """
    store = ArtifactStore(artifact_dir)
    missing = [name for name in REQUIRED_ARTIFACTS if not store.exists(name)]
    if missing:
        raise ArtifactError("Not an artifact directory, expected files missing", missing)
    manifest = store.read_json("manifest.json")

    problems: List[str] = []
    lines = [f"{settings.APP_NAME} {manifest['app_version']}", f"seed: {manifest['seed']}", ""]

    lines.append("Tasks")
    tasks = [t for t in manifest["tasks"] if t["name"] != "report"]
    for task in tasks:
        error = f"  ({task['error']})" if task.get("error") else ""
        lines.append(f"  {task['name']:<32}{task['status']}{error}")

    loaded: Dict[str, Any] = {}
    for task in tasks:
        for relative in task.get("artifacts", []):
            if not relative.endswith(".json"):
                if not store.exists(relative):
                    problems.append(f"{relative}: missing")
                continue
            try:
                loaded[relative] = store.read_json(relative)
            except ArtifactError as e:
                problems.append(e.detail)

    structure = loaded.get("structure/report.json")
    if structure:
        lines += ["", "Structure conditions"]
        for cond in structure["conditions"]:
            lines.append(
                f"  {cond['name']:<22}{'pass' if cond['passed'] else 'FAIL'}"
                f"  worst margin {_number(cond['worst_margin'])}"
                f"  violations {cond['violations']}"
                f"  witness s={_number(cond['witness_s'])}"
            )

    energy = loaded.get("simulate/energy.json")
    if energy:
        lines += [
            "",
            "Energy inequality",
            f"  steps {energy['steps']}  violations {energy['violations']}"
            f"  max residual/slack {_number(energy['max_residual_over_slack'])}",
        ]

    estimates = sorted(k for k in loaded if k.startswith("estimates/"))
    if estimates:
        lines += [
            "",
            "Estimates (worst row per checker)",
            f"  {'check':<16}{'horizon':>15}{'bound':>15}{'observed':>15}{'margin':>15}",
        ]
        for relative in estimates:
            lines.append(_estimate_lines(loaded[relative]))

    attractor = loaded.get("attractor/manifest.json")
    if attractor:
        lines += [
            "",
            "Attractor",
            f"  tau {_number(attractor['tau'])}  members {len(attractor['members'])}"
            f"  diameter {_number(attractor['diameter'])}"
            f"  converged {attractor['converged']}",
            "  ladder gaps: " + " ".join(_number(g) for g in attractor["history"]),
        ]
        invariance = loaded.get("attractor/invariance.json")
        if invariance:
            lines.append(
                f"  invariance  {_number(invariance['image_to_section'])}"
                f" / {_number(invariance['section_to_image'])}"
                f"  tolerance {_number(invariance['tolerance'])}"
                f"  {'pass' if invariance['passed'] else 'FAIL'}"
            )
        for norm in ("l2", "h1"):
            report = loaded.get(f"attractor/attraction_{norm}.json")
            if report:
                lines.append(
                    f"  attraction {norm}: "
                    + " ".join(_number(d) for d in report["distances"])
                    + f"  {'pass' if report['passed'] else 'FAIL'}"
                )
        seeds = loaded.get("attractor/seed_independence.json")
        if seeds:
            worst = max(max(row) for row in seeds["distances"])
            lines.append(
                f"  seeds {seeds['seeds']}: worst gap {_number(worst)}"
                f"  {'pass' if seeds['passed'] else 'FAIL'}"
            )

    lines += ["", "Files"]
    lines += [f"  {name}" for name in manifest["files"] if name != SUMMARY]
    if problems:
        lines += ["", "Problems"] + [f"  {p}" for p in problems]

    relative = store.write_text(SUMMARY, "\n".join(lines) + "\n")
    if problems:
        raise ArtifactError("Incomplete artifact directory", problems)
    logger.info(f"Summary written to {store.path(relative)}")
    return relative
