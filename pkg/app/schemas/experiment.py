import math
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from app.core.config import settings
from app.core.exceptions import ConfigValidationError
from app.models.attractor import SamplerKind
from app.models.equation import (
    NonlinearityKind,
    SpatialKind,
    TemporalKind,
    derived_constants,
)
from app.models.trajectory import Scheme


class _Block(BaseModel):
    model_config = {"extra": "forbid"}


class GridBlock(_Block):
    """Spatial truncation and resolution."""
    n: int = Field(1, ge=1, le=2)
    L: float = Field(8.0, gt=0)
    N: int = Field(255, ge=3)


class ModelBlock(_Block):
    """Decay rate and nonlinearity; alpha* override the derived constants."""
    lam: float = Field(1.0, gt=0)
    p: float = Field(4.0, ge=2)
    kind: NonlinearityKind = NonlinearityKind.POWER
    beta: float = 1.0
    psi_amplitude: float = 0.0
    linear_coefficient: float = 0.0
    alpha1: Optional[float] = None
    alpha2: Optional[float] = None
    alpha3: Optional[float] = None
    alpha4: Optional[float] = None
    alpha5: Optional[float] = None

    @property
    def exponent(self) -> float:
        return 2.0 if self.kind is NonlinearityKind.LINEAR else self.p

    def constants(self) -> Dict[str, float]:
        """alpha1..alpha5 after applying overrides."""
        values = derived_constants(
            self.kind,
            self.exponent,
            self.beta,
            self.psi_amplitude,
            self.linear_coefficient,
            self.alpha3,
        )
        for name in ("alpha1", "alpha2", "alpha4", "alpha5"):
            override = getattr(self, name)
            if override is not None:
                values[name] = override
        return values


class ForcingBlock(_Block):
    """Separable forcing g(x, t) = a(t) rho(x)."""
    temporal: TemporalKind = TemporalKind.EXPONENTIAL
    spatial: SpatialKind = SpatialKind.GAUSSIAN
    amplitude: float = 0.35
    rate: float = 0.0
    degree: float = Field(0.0, ge=0)
    bump_radius: float = Field(1.0, gt=0)


class SolverBlock(_Block):
    dt: float = Field(0.01, gt=0)
    scheme: Scheme = Scheme.IMEX
    newton_tol: float = Field(1e-10, gt=0)
    newton_max_iter: int = Field(25, ge=1)
    slack_constant: float = Field(10.0, gt=0)
    snapshot_every: Optional[int] = Field(None, ge=1)


class FamilyBlock(_Block):
    """Tempered family of initial balls r(t) = R0 (1+|tau-t|)^sigma e^{gamma|tau-t|}."""
    base_radius: float = Field(1.0, gt=0)
    sigma: float = Field(0.0, ge=0)
    gamma: float = Field(0.0, ge=0)
    sampler: SamplerKind = SamplerKind.BAND_LIMITED
    modes: int = Field(6, ge=1)
    ensemble_size: int = Field(4, ge=2)


class StructureTask(_Block):
    enabled: bool = True
    s_min: float = -10.0
    s_max: float = 10.0
    samples: int = Field(10_000, ge=100)


class SimulateTask(_Block):
    enabled: bool = True
    t0: float = 0.0
    t1: float = 20.0
    tail_radii: List[float] = Field(default_factory=list)


class EstimatesTask(_Block):
    enabled: bool = True
    tau: float = 0.0
    horizons: List[float] = Field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0])
    eta: float = Field(1e-3, gt=0)
    radii: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 3.0, 4.0, 5.0])
    cauchy_pairs: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(20.0, 40.0)]
    )
    checks: List[str] = Field(
        default_factory=lambda: [
            "absorbing_l2",
            "time_integrals",
            "h1_bound",
            "ut_bound",
            "tail",
            "h1_cauchy",
        ]
    )


class AttractorTask(_Block):
    enabled: bool = True
    tau: float = 0.0
    ladder: List[float] = Field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0])
    tol: float = Field(1e-4, gt=0)
    invariance_shift: float = Field(1.0, gt=0)
    invariance_tol: float = Field(1e-3, gt=0)
    invariance_fraction: float = Field(0.05, ge=0)
    attraction_horizons: List[float] = Field(
        default_factory=lambda: [5.0, 10.0, 20.0, 40.0]
    )
    attraction_tol: float = Field(1e-3, gt=0)
    extra_seeds: List[int] = Field(default_factory=list)


class TasksBlock(_Block):
    verify_structure: StructureTask = Field(default_factory=StructureTask)
    simulate: SimulateTask = Field(default_factory=SimulateTask)
    estimates: EstimatesTask = Field(default_factory=EstimatesTask)
    attractor: AttractorTask = Field(default_factory=AttractorTask)


KNOWN_CHECKS = (
    "absorbing_l2",
    "time_integrals",
    "h1_bound",
    "ut_bound",
    "tail",
    "h1_cauchy",
)


def _increasing(values: List[float]) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


class ExperimentConfig(_Block):
    """Schema for a complete experiment file."""
    grid: GridBlock
    model: ModelBlock
    forcing: ForcingBlock
    solver: SolverBlock = Field(default_factory=SolverBlock)
    family: FamilyBlock = Field(default_factory=FamilyBlock)
    tasks: TasksBlock = Field(default_factory=TasksBlock)
    seed: int = Field(0, ge=0)
    jobs: int = Field(settings.DEFAULT_JOBS, ge=1)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _cross_checks(self) -> "ExperimentConfig":
        problems = self.violations()
        if problems:
            raise ConfigValidationError(problems)
        return self

    def violations(self) -> List[str]:
        """Every cross-block rule this config breaks, in a fixed order."""
        problems: List[str] = []
        lam = self.model.lam
        constants = self.model.constants()

        for name, value in constants.items():
            if value < 0:
                problems.append(f"model.{name} = {value:g} must be >= 0")
        if self.model.kind is NonlinearityKind.POWER and self.model.beta == 0.0:
            problems.append("model.beta must be nonzero for the power nonlinearity")

        if self.forcing.temporal is TemporalKind.EXPONENTIAL:
            if lam + 2.0 * self.forcing.rate <= 0:
                problems.append(
                    f"lambda + 2*delta = {lam + 2.0 * self.forcing.rate:g} <= 0 "
                    "violates forcing temperedness"
                )
        if self.forcing.spatial is SpatialKind.BUMP:
            if self.forcing.bump_radius >= self.grid.L:
                problems.append(
                    f"forcing.bump_radius = {self.forcing.bump_radius:g} must lie "
                    f"inside the box (L = {self.grid.L:g})"
                )

        if self.solver.scheme is Scheme.IMEX:
            margin = self.solver.dt * constants["alpha3"]
            if margin > 0.5:
                problems.append(
                    f"dt * alpha3 = {margin:g} > 0.5 violates the imex stability margin"
                )

        if 2.0 * self.family.gamma >= lam:
            problems.append(
                f"2*gamma = {2.0 * self.family.gamma:g} >= lambda = {lam:g}: "
                "family is not tempered"
            )

        structure = self.tasks.verify_structure
        if structure.s_min >= structure.s_max:
            problems.append("tasks.verify_structure: s_min must be < s_max")

        simulate = self.tasks.simulate
        if simulate.t1 <= simulate.t0:
            problems.append("tasks.simulate: t1 must be > t0")
        for k in simulate.tail_radii:
            if k < 0 or k > self.grid.L:
                problems.append(
                    f"tasks.simulate.tail_radii: {k:g} outside [0, L = {self.grid.L:g}]"
                )

        estimates = self.tasks.estimates
        if not estimates.horizons or not _increasing(estimates.horizons):
            problems.append("tasks.estimates.horizons must be nonempty and increasing")
        elif estimates.horizons[0] <= 2.0:
            problems.append("tasks.estimates.horizons must all exceed 2")
        limit = self.grid.L / math.sqrt(2.0)
        for k in estimates.radii:
            if k < 0 or k > limit:
                problems.append(
                    f"tasks.estimates.radii: {k:g} outside [0, L/sqrt(2) = {limit:g}]"
                )
        if len(set(estimates.radii)) != len(estimates.radii):
            problems.append("tasks.estimates.radii must be distinct")
        for tn, tm in estimates.cauchy_pairs:
            if not 0 < tn < tm:
                problems.append(
                    f"tasks.estimates.cauchy_pairs: ({tn:g}, {tm:g}) needs 0 < t_n < t_m"
                )
        for name in estimates.checks:
            if name not in KNOWN_CHECKS:
                problems.append(f"tasks.estimates.checks: unknown check '{name}'")

        attractor = self.tasks.attractor
        if len(attractor.ladder) < 2 or not _increasing(attractor.ladder):
            problems.append("tasks.attractor.ladder needs >= 2 increasing horizons")
        elif attractor.ladder[0] <= 0:
            problems.append("tasks.attractor.ladder horizons must be positive")
        if not attractor.attraction_horizons or not _increasing(
            attractor.attraction_horizons
        ):
            problems.append(
                "tasks.attractor.attraction_horizons must be nonempty and increasing"
            )
        return problems
