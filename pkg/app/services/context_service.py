import logging
from dataclasses import dataclass, replace
from typing import Optional

from app.models.attractor import TemperedFamily
from app.models.equation import ForcingSpec, ModelSpec
from app.models.grid import Grid
from app.models.trajectory import SolverControls
from app.schemas.experiment import ExperimentConfig
from app.services.domain_service import build_grid
from app.services.model_service import build_forcing, build_model

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentContext:
    """Runtime objects built once from a validated config."""

    config: ExperimentConfig
    grid: Grid
    model: ModelSpec
    forcing: ForcingSpec
    controls: SolverControls
    family: TemperedFamily
    ensemble_size: int
    seed: int
    jobs: int

    @property
    def lam(self) -> float:
        return self.model.lam

    @property
    def slack_constant(self) -> float:
        return self.controls.slack_constant

    def anchored(self, tau: float, seed: Optional[int] = None) -> TemperedFamily:
        """The configured family anchored at tau (optionally reseeded)."""
        return replace(self.family, anchor=tau, seed=self.seed if seed is None else seed)


def build_context(cfg: ExperimentConfig) -> ExperimentContext:
    """
    Build grid, model, forcing, solver controls and family from a config.

    Args:
        cfg: Validated experiment config

    Returns:
        ExperimentContext shared by every task of a run
    """
    grid = build_grid(cfg.grid.n, cfg.grid.L, cfg.grid.N)
    model = build_model(cfg.model, grid)
    forcing = build_forcing(cfg.forcing, grid)
    controls = SolverControls(
        dt=cfg.solver.dt,
        scheme=cfg.solver.scheme,
        newton_tol=cfg.solver.newton_tol,
        newton_max_iter=cfg.solver.newton_max_iter,
        snapshot_every=cfg.solver.snapshot_every,
        tail_radii=tuple(cfg.tasks.simulate.tail_radii),
        slack_constant=cfg.solver.slack_constant,
    )
    family = TemperedFamily(
        base_radius=cfg.family.base_radius,
        sigma=cfg.family.sigma,
        gamma=cfg.family.gamma,
        sampler=cfg.family.sampler,
        modes=cfg.family.modes,
        seed=cfg.seed,
    )
    logger.info(f"Experiment context ready: {grid}, model={model.kind.value}, dt={controls.dt:g}")
    return ExperimentContext(
        config=cfg,
        grid=grid,
        model=model,
        forcing=forcing,
        controls=controls,
        family=family,
        ensemble_size=cfg.family.ensemble_size,
        seed=cfg.seed,
        jobs=cfg.jobs,
    )
