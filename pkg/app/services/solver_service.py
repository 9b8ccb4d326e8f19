import asyncio
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from scipy import fft, linalg, sparse
from scipy.sparse.linalg import spsolve

from app.core.cache import factorization_cache
from app.core.exceptions import (
    BlowUpError,
    InvalidParameterError,
    NewtonConvergenceError,
    StabilityError,
)
from app.db.artifacts import ArtifactStore
from app.models.equation import ForcingSpec, ModelSpec
from app.models.grid import Field, Grid
from app.models.trajectory import (
    ContinuityGap,
    EnergyDiagnostics,
    Scheme,
    SolverControls,
    Trajectory,
)
from app.services import energy_service
from app.services.domain_service import axis_eigenvalues, laplacian_matrix

logger = logging.getLogger(__name__)

T = TypeVar("T")

STABILITY_MARGIN = 0.5


class BandedSolver:
    """Cholesky factor of (1 + dt lam) I - dt Delta_h in upper banded storage (1D)."""

    def __init__(self, grid: Grid, dt: float, lam: float):
        ab = np.zeros((2, grid.N))
        ab[0, 1:] = -dt / grid.h ** 2
        ab[1, :] = 1.0 + dt * lam + 2.0 * dt / grid.h ** 2
        self.factor = linalg.cholesky_banded(ab)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve_banded((self.factor, False), rhs)


class SpectralSolver:
    """Fast diagonalization of the same operator by the type-I sine transform (2D)."""

    def __init__(self, grid: Grid, dt: float, lam: float):
        mu = axis_eigenvalues(grid)
        self.denominator = 1.0 + dt * lam + dt * (mu[:, None] + mu[None, :])

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return fft.idstn(fft.dstn(rhs, type=1) / self.denominator, type=1)


def linear_solver(grid: Grid, dt: float, lam: float):
    """Factorization of the implicit linear part, shared through the factorization cache."""
    key = ("linear", grid, float(dt), float(lam))
    solver = factorization_cache.get(key)
    if solver is None:
        solver = BandedSolver(grid, dt, lam) if grid.n == 1 else SpectralSolver(grid, dt, lam)
        factorization_cache.set(key, solver)
    return solver


def cached_laplacian(grid: Grid) -> sparse.csr_matrix:
    key = ("laplacian", grid)
    matrix = factorization_cache.get(key)
    if matrix is None:
        matrix = laplacian_matrix(grid)
        factorization_cache.set(key, matrix)
    return matrix


def step_schedule(t0: float, t1: float, dt: float) -> List[Tuple[float, float, float]]:
    """
    (start, size, end) of every step from t0 to t1.

    Step ends are t0 + j*dt; the final end is exactly t1, with the last step
    shortened when (t1 - t0)/dt is not an integer.
    """
    ratio = (t1 - t0) / dt
    nearest = round(ratio)
    full = int(nearest) if abs(ratio - nearest) < 1e-6 else int(math.floor(ratio))
    schedule = []
    start = t0
    for j in range(1, full + 1):
        end = t1 if j == full and abs(ratio - nearest) < 1e-6 else t0 + j * dt
        schedule.append((start, dt, end))
        start = end
    if start < t1:
        schedule.append((start, t1 - start, t1))
    return schedule


class StepKernel:
    """Precomputed per-run data for advancing raw sample arrays."""

    def __init__(
        self,
        model: ModelSpec,
        forcing: ForcingSpec,
        grid: Grid,
        controls: SolverControls,
    ):
        if controls.dt <= 0:
            raise InvalidParameterError(f"time step must be positive, got {controls.dt}")
        if controls.scheme is Scheme.IMEX and controls.dt * model.alpha3 > STABILITY_MARGIN:
            raise StabilityError(controls.dt, model.alpha3)
        self.model = model
        self.forcing = forcing
        self.grid = grid
        self.controls = controls
        radius = grid.radius()
        self.psi = model.psi(radius)
        self.rho = None if forcing.is_zero else forcing.rho(radius)
        self._solvers: Dict[float, object] = {}

    def forcing_at(self, t: float):
        if self.rho is None:
            return 0.0
        return self.forcing.a(t) * self.rho

    def _solver(self, dt: float):
        solver = self._solvers.get(dt)
        if solver is None:
            solver = linear_solver(self.grid, dt, self.model.lam)
            self._solvers[dt] = solver
        return solver

    def advance(self, values: np.ndarray, t: float, dt: float) -> np.ndarray:
        """Samples at t + dt from samples at t."""
        t_next = t + dt
        with np.errstate(over="ignore", invalid="ignore"):
            rhs = values + dt * (self.model.f(values, self.psi) + self.forcing_at(t_next))
        if not np.all(np.isfinite(rhs)):
            raise BlowUpError(t_next)
        new = self._solver(dt).solve(rhs)
        if self.controls.scheme is Scheme.IMPLICIT:
            new = self._newton(values, new, t_next, dt)
        if not np.all(np.isfinite(new)):
            raise BlowUpError(t_next)
        return new

    def _newton(self, values, guess, t_next, dt) -> np.ndarray:
        """Newton iteration on v - dt Delta v + dt lam v - dt f(v) = u + dt g, from the imex guess."""
        grid = self.grid
        lam = self.model.lam
        lap = cached_laplacian(grid)
        shape = grid.shape
        b = values + dt * self.forcing_at(t_next)
        v = guess.copy()
        residual = np.inf
        for iteration in range(1, self.controls.newton_max_iter + 1):
            with np.errstate(over="ignore", invalid="ignore"):
                G = (
                    v
                    - dt * (lap @ v.ravel()).reshape(shape)
                    + dt * lam * v
                    - dt * self.model.f(v, self.psi)
                    - b
                )
                df = self.model.df_ds(v)
            if not (np.all(np.isfinite(G)) and np.all(np.isfinite(df))):
                raise BlowUpError(t_next)
            residual = float(np.max(np.abs(G)))
            diagonal = 1.0 + dt * lam + 2.0 * grid.n * dt / grid.h ** 2 - dt * df
            if grid.n == 1:
                ab = np.zeros((3, grid.N))
                ab[0, 1:] = -dt / grid.h ** 2
                ab[1, :] = diagonal
                ab[2, :-1] = -dt / grid.h ** 2
                delta = linalg.solve_banded((1, 1), ab, -G)
            else:
                jacobian = sparse.identity(grid.size, format="csr") * (1.0 + dt * lam) - dt * lap
                jacobian = jacobian - sparse.diags(dt * df.ravel())
                delta = spsolve(jacobian.tocsc(), -G.ravel()).reshape(shape)
            v = v + delta
            if float(np.max(np.abs(delta))) <= self.controls.newton_tol * max(
                1.0, float(np.max(np.abs(v)))
            ):
                logger.debug(f"Newton converged in {iteration} iterations at t={t_next:g}")
                return v
        raise NewtonConvergenceError(t_next, self.controls.newton_max_iter, residual)


def step(
    model: ModelSpec,
    forcing: ForcingSpec,
    grid: Grid,
    u: Field,
    t: float,
    controls: SolverControls,
) -> Field:
    """
    Advance one step of size ``controls.dt`` from time t.

    imex: solve ((1 + dt lam) I - dt Delta_h) u+ = u + dt (f(x, u) + g(x, t + dt));
    implicit: Newton on the same system with f(x, u+).

    Raises:
        StabilityError: If dt * alpha3 > 1/2 for the imex scheme
        BlowUpError: If a sample becomes non-finite
        NewtonConvergenceError: If Newton fails (implicit scheme)
    """
    u.require_grid(grid)
    kernel = StepKernel(model, forcing, grid, controls)
    return Field(grid, kernel.advance(u.values, t, controls.dt))


def _march(
    kernel: StepKernel,
    values: np.ndarray,
    t0: float,
    t1: float,
    on_step: Optional[Callable[[float, np.ndarray], None]] = None,
) -> np.ndarray:
    for start, size, end in step_schedule(t0, t1, kernel.controls.dt):
        values = kernel.advance(values, start, size)
        if on_step is not None:
            on_step(end, values)
    return values


def evolve(
    model: ModelSpec,
    forcing: ForcingSpec,
    grid: Grid,
    u0: Field,
    tau0: float,
    tau1: float,
    controls: SolverControls,
    record: bool = True,
) -> Trajectory:
    """
    Integrate from tau0 to tau1, landing exactly on tau1.

    Args:
        model: Equation data
        forcing: Forcing data
        grid: Grid of u0
        u0: Initial state at tau0
        tau0: Start time
        tau1: End time, > tau0
        controls: Step size, scheme and recording options
        record: Record per-step diagnostics

    Returns:
        Trajectory with samples every ``controls.snapshot_every`` steps (every
        step when unset), always including both ends

    Raises:
        InvalidParameterError: If tau1 <= tau0
        SolverError: On blow-up or Newton failure, with the failing time attached
    """
    u0.require_grid(grid)
    if not tau1 > tau0:
        raise InvalidParameterError(f"evolve needs tau1 > tau0, got [{tau0}, {tau1}]")
    kernel = StepKernel(model, forcing, grid, controls)
    every = controls.snapshot_every or 1
    samples: List[Tuple[float, Field]] = [(tau0, u0)]
    times: List[float] = []
    rows: List[Tuple[float, float, float, float]] = []
    tails: Dict[float, List[float]] = {k: [] for k in controls.tail_radii}
    counter = {"steps": 0}

    def observe(t: float, values: np.ndarray, field: Optional[Field] = None) -> None:
        if not record:
            return
        field = field if field is not None else Field(grid, values)
        times.append(t)
        rows.append(energy_service.record_diagnostics(model, field))
        for k in tails:
            tails[k].append(energy_service.tail_mass(field, k))

    def on_step(t: float, values: np.ndarray) -> None:
        counter["steps"] += 1
        field = None
        if counter["steps"] % every == 0 or t == tau1:
            field = Field(grid, values)
            samples.append((t, field))
        observe(t, values, field)

    observe(tau0, u0.values, u0)
    final = _march(kernel, u0.values, tau0, tau1, on_step)
    if samples[-1][0] != tau1:
        samples.append((tau1, Field(grid, final)))

    diagnostics = None
    if record:
        table = np.array(rows)
        diagnostics = EnergyDiagnostics(
            times=np.array(times),
            l2=table[:, 0],
            h1_semi=table[:, 1],
            lp=table[:, 2],
            potential=table[:, 3],
            tails={k: np.array(v) for k, v in tails.items()},
        )
    traj = Trajectory(
        grid=grid, t0=tau0, t1=tau1, dt=controls.dt, samples=samples, diagnostics=diagnostics
    )
    if record and controls.monitor_energy:
        diagnostics.residual = energy_service.energy_residual(model, forcing, traj)
        energy_service.residual_violations(model, forcing, traj, controls.slack_constant)
    logger.debug(f"Evolved {grid} over [{tau0:g}, {tau1:g}] in {counter['steps']} steps")
    return traj


def pullback_solve(
    model: ModelSpec,
    forcing: ForcingSpec,
    grid: Grid,
    tau: float,
    t: float,
    u0: Field,
    controls: SolverControls,
) -> Field:
    """
    Evaluate the cocycle phi(t, tau - t, u0): evolve from tau - t to tau.

    Only the endpoint is kept.

    Raises:
        InvalidParameterError: If t <= 0
        SolverError: As evolve
    """
    if not t > 0:
        raise InvalidParameterError(f"pullback horizon must be positive, got {t}")
    u0.require_grid(grid)
    kernel = StepKernel(model, forcing, grid, controls)
    return Field(grid, _march(kernel, u0.values, tau - t, tau))


def pullback_with_previous(
    model: ModelSpec,
    forcing: ForcingSpec,
    grid: Grid,
    tau: float,
    t: float,
    u0: Field,
    controls: SolverControls,
) -> Tuple[Field, Field, float]:
    """Endpoint, the state one step earlier, and that last step size."""
    if not t > 0:
        raise InvalidParameterError(f"pullback horizon must be positive, got {t}")
    u0.require_grid(grid)
    kernel = StepKernel(model, forcing, grid, controls)
    schedule = step_schedule(tau - t, tau, controls.dt)
    values = u0.values
    for start, size, _ in schedule[:-1]:
        values = kernel.advance(values, start, size)
    start, size, _ = schedule[-1]
    final = kernel.advance(values, start, size)
    return Field(grid, final), Field(grid, values), size


def continuity_gap(
    model: ModelSpec,
    forcing: ForcingSpec,
    grid: Grid,
    tau: float,
    t: float,
    u0: Field,
    v0: Field,
    controls: SolverControls,
) -> ContinuityGap:
    """Compare the endpoint distance of two pullback runs with e^{(alpha3 - lam) t} eps."""
    epsilon = math.sqrt(energy_service.l2_norm_sq(u0 - v0))
    a = pullback_solve(model, forcing, grid, tau, t, u0, controls)
    b = pullback_solve(model, forcing, grid, tau, t, v0, controls)
    observed = math.sqrt(energy_service.l2_norm_sq(a - b))
    predicted = math.exp((model.alpha3 - model.lam) * t) * epsilon
    return ContinuityGap(epsilon=epsilon, observed=observed, predicted=predicted)


async def run_ensemble_async(tasks: Sequence[Callable[[], T]], jobs: int = 1) -> List[T]:
    """
    Run independent callables on a bounded thread pool.

    Results come back in input order regardless of completion order.
    """
    jobs = max(1, int(jobs))
    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(jobs)
    executor = ThreadPoolExecutor(max_workers=jobs)

    async def run_one(index: int, fn: Callable[[], T]) -> T:
        async with semaphore:
            logger.debug(f"Ensemble member {index} started")
            return await loop.run_in_executor(executor, fn)

    try:
        return list(await asyncio.gather(*(run_one(i, fn) for i, fn in enumerate(tasks))))
    finally:
        executor.shutdown(wait=True)


def run_ensemble(tasks: Sequence[Callable[[], T]], jobs: int = 1) -> List[T]:
    """Synchronous entry point for run_ensemble_async."""
    if not tasks:
        return []
    return asyncio.run(run_ensemble_async(tasks, jobs))


def pullback_ensemble(
    model: ModelSpec,
    forcing: ForcingSpec,
    grid: Grid,
    tau: float,
    t: float,
    initials: Sequence[Field],
    controls: SolverControls,
    jobs: int = 1,
) -> List[Field]:
    """phi(t, tau - t, u0) for every u0, computed concurrently, in input order."""
    tasks = [
        (lambda u0=u0: pullback_solve(model, forcing, grid, tau, t, u0, controls))
        for u0 in initials
    ]
    return run_ensemble(tasks, jobs)


def export_trajectory(traj: Trajectory, store: ArtifactStore, directory: str = "simulate") -> List[str]:
    """
    Write snapshots.csv (t, then node values), diagnostics.csv and metadata.json.

    Returns:
        Relative paths written
    """
    grid = traj.grid
    written = []
    node_header = ["t"] + [f"u{i}" for i in range(grid.size)]
    written.append(
        store.write_csv(
            f"{directory}/snapshots.csv",
            node_header,
            ([t] + list(field.values.ravel()) for t, field in traj.samples),
        )
    )
    diag = traj.diagnostics
    if diag is not None:
        radii = sorted(diag.tails)
        header = ["t", "l2", "h1", "lp", "potential"] + [f"tail_{k:g}" for k in radii] + [
            "residual"
        ]
        residual = diag.residual

        def rows():
            for j, t in enumerate(diag.times):
                row = [t, diag.l2[j], diag.h1_semi[j], diag.lp[j], diag.potential[j]]
                row += [diag.tails[k][j] for k in radii]
                row.append(residual[j - 1] if residual is not None and j > 0 else float("nan"))
                yield row

        written.append(store.write_csv(f"{directory}/diagnostics.csv", header, rows()))
    written.append(
        store.write_json(
            f"{directory}/metadata.json",
            {
                "grid": {"n": grid.n, "L": grid.L, "N": grid.N, "h": grid.h},
                "t0": traj.t0,
                "t1": traj.t1,
                "dt": traj.dt,
                "samples": len(traj.samples),
                "steps": 0 if diag is None else int(diag.times.size - 1),
                "tail_radii": [] if diag is None else sorted(diag.tails),
            },
        )
    )
    return written
