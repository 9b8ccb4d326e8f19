import logging
import math
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np

from app.core.exceptions import InvalidParameterError, TemperednessError
from app.db.artifacts import ArtifactStore
from app.models.attractor import AttractorApprox, Norm, SamplerKind, TemperedFamily
from app.models.grid import Field, Grid
from app.schemas.report import (
    AttractionReport,
    AttractorManifest,
    InvarianceReport,
    SeedIndependenceReport,
)
from app.services import energy_service, solver_service
from app.services.context_service import ExperimentContext

logger = logging.getLogger(__name__)

DECREASE_FLOOR = 1e-10


def field_norm(u: Field, norm: Norm) -> float:
    if norm is Norm.H1:
        return math.sqrt(energy_service.h1_norm_sq(u))
    return math.sqrt(energy_service.l2_norm_sq(u))


def pairwise_distances(Y: Sequence[Field], Z: Sequence[Field], norm: Norm = Norm.L2) -> np.ndarray:
    """Matrix of ||y_i - z_j|| in the selected norm."""
    if not Y or not Z:
        raise InvalidParameterError("Hausdorff distance needs two nonempty sets")
    grid = Y[0].grid
    for member in list(Y) + list(Z):
        member.require_grid(grid)
    return np.array([[field_norm(y - z, norm) for z in Z] for y in Y])


def hausdorff_semidistance(Y: Sequence[Field], Z: Sequence[Field], norm: Norm = Norm.L2) -> float:
    """
    d(Y, Z) = max over y in Y of min over z in Z of ||y - z||.

    Raises:
        InvalidParameterError: If either set is empty
        GridMismatchError: If members live on different grids
    """
    return float(np.max(np.min(pairwise_distances(Y, Z, norm), axis=1)))


def symmetric_gap(Y: Sequence[Field], Z: Sequence[Field], norm: Norm = Norm.L2) -> float:
    distances = pairwise_distances(Y, Z, norm)
    return float(max(np.max(np.min(distances, axis=1)), np.max(np.min(distances, axis=0))))


def validate_family(family: TemperedFamily, lam: float, backward: Sequence[float] = (10.0, 20.0, 40.0)) -> List[float]:
    """
    Check membership in the tempered universe: 2 gamma < lam.

    Returns:
        e^{lam t} r(t)^2 at anchor - s for every s in ``backward``

    Raises:
        TemperednessError: If 2 gamma >= lam
    """
    if 2.0 * family.gamma >= lam:
        raise TemperednessError(
            f"2*gamma = {2.0 * family.gamma:g} >= lambda = {lam:g}: family is not tempered"
        )
    return [family.weighted_size(lam, family.anchor - s) for s in backward]


def _sine_modes(grid: Grid, modes: int) -> List[np.ndarray]:
    """Low-frequency Dirichlet sine modes, products over axes in 2D."""
    modes = min(modes, grid.N)
    i = np.arange(1, grid.N + 1)
    profiles = [np.sin(np.pi * j * i / (grid.N + 1)) for j in range(1, modes + 1)]
    if grid.n == 1:
        return profiles
    return [np.multiply.outer(a, b) for a in profiles for b in profiles]


def _rescaled(grid: Grid, values: np.ndarray, radius: float) -> Field:
    norm = math.sqrt(grid.cell_volume * float(np.sum(values ** 2)))
    return Field(grid, values * (radius / norm))


def family_directions(family: TemperedFamily, grid: Grid, count: int, seed: Optional[int] = None) -> List[np.ndarray]:
    """
    Unnormalized member shapes, independent of the backward time.

    The first members are canonical (+/- first eigenfunction, then higher
    modes for the canonical sampler); band-limited members follow, drawn from
    np.random.default_rng(seed).
    """
    basis = _sine_modes(grid, family.modes)
    directions: List[np.ndarray] = []
    if family.sampler is SamplerKind.CANONICAL:
        for index in range(count):
            sign = 1.0 if index % 2 == 0 else -1.0
            directions.append(sign * basis[(index // 2) % len(basis)])
        return directions

    directions.append(basis[0])
    if count > 1:
        directions.append(-basis[0])
    rng = np.random.default_rng(family.seed if seed is None else seed)
    stack = np.array(basis)
    for _ in range(count - len(directions)):
        coefficients = rng.standard_normal(len(basis))
        directions.append(np.tensordot(coefficients, stack, axes=1))
    return directions


def sample_family(
    family: TemperedFamily,
    grid: Grid,
    t: float,
    count: int,
    seed: Optional[int] = None,
    lam: Optional[float] = None,
) -> List[Field]:
    """
    Draw ``count`` Fields with L^2 norm exactly r(t).

    Args:
        family: Tempered family
        grid: Grid of the members
        t: Backward time at which the ball is sampled
        count: Number of members
        seed: Overrides the family seed
        lam: When given, temperedness is validated first

    Raises:
        TemperednessError: If lam is given and 2 gamma >= lam
        InvalidParameterError: If count < 1
    """
    if count < 1:
        raise InvalidParameterError(f"need at least one family member, got {count}")
    if lam is not None:
        validate_family(family, lam)
    radius = family.radius(t)
    return [_rescaled(grid, d, radius) for d in family_directions(family, grid, count, seed)]


def pullback_endpoints(
    ctx: ExperimentContext,
    family: TemperedFamily,
    tau: float,
    t: float,
    count: Optional[int] = None,
    seed: Optional[int] = None,
) -> List[Field]:
    """phi(t, tau - t, u0) for every sampled u0 of family(tau - t)."""
    initials = sample_family(
        family, ctx.grid, tau - t, count or ctx.ensemble_size, seed, lam=ctx.lam
    )
    return solver_service.pullback_ensemble(
        ctx.model, ctx.forcing, ctx.grid, tau, t, initials, ctx.controls, ctx.jobs
    )


def approximate_attractor(
    ctx: ExperimentContext,
    tau: float,
    ladder: Sequence[float],
    ensemble_size: Optional[int] = None,
    tol: float = 1e-4,
    seed: Optional[int] = None,
) -> AttractorApprox:
    """
    Approximate the attractor section at tau by pullback endpoint sets.

    E_j = {phi(t_j, tau - t_j, u0)} over sampled members of the family at
    tau - t_j; stops at the first j with symmetric L^2 gap(E_j, E_{j+1}) <= tol.

    Returns:
        The last endpoint set; ``converged`` is False when the ladder ran out

    Raises:
        InvalidParameterError: If the ladder is not increasing or the ensemble is too small
        SolverError: On solver failures
    """
    ladder = [float(t) for t in ladder]
    if len(ladder) < 2 or any(b <= a for a, b in zip(ladder, ladder[1:])) or ladder[0] <= 0:
        raise InvalidParameterError("attractor ladder needs >= 2 increasing positive horizons")
    count = ensemble_size or ctx.ensemble_size
    if count < 2:
        raise InvalidParameterError(f"ensemble size must be >= 2, got {count}")
    seed = ctx.seed if seed is None else seed
    family = ctx.anchored(tau, seed)

    history: List[float] = []
    previous: Optional[List[Field]] = None
    converged = False
    used: List[float] = []
    for t in ladder:
        endpoints = pullback_endpoints(ctx, family, tau, t, count, seed)
        used.append(t)
        if previous is not None:
            gap = symmetric_gap(previous, endpoints)
            history.append(gap)
            logger.info(f"Attractor ladder tau={tau:g}: horizon {t:g} gap {gap:.3e}")
            if gap <= tol:
                converged = True
                previous = endpoints
                break
        previous = endpoints

    if not converged:
        logger.warning(f"Attractor ladder at tau={tau:g} did not reach tol={tol:g}")
    members = previous
    approx = AttractorApprox(
        tau=tau,
        members=members,
        horizons=[used[-1]] * len(members),
        metadata={
            "ensemble_size": count,
            "seed": seed,
            "ladder": used,
            "tol": tol,
            "family": {
                "base_radius": family.base_radius,
                "sigma": family.sigma,
                "gamma": family.gamma,
                "sampler": family.sampler.value,
                "modes": family.modes,
            },
        },
        distances=pairwise_distances(members, members),
        converged=converged,
        history=history,
    )
    return approx


def check_invariance(
    ctx: ExperimentContext,
    approx: AttractorApprox,
    s: float,
    tol: float = 1e-3,
    fraction: float = 0.05,
) -> InvarianceReport:
    """
    Compare phi(s, tau, A(tau)) with an independent approximation of A(tau + s).

    Passes when both semi-distances are <= max(tol, fraction * diameter).

    Raises:
        InvalidParameterError: If s <= 0
    """
    if not s > 0:
        raise InvalidParameterError(f"invariance shift must be positive, got {s}")
    tau = approx.tau
    image = solver_service.run_ensemble(
        [
            (lambda u=u: solver_service.pullback_solve(
                ctx.model, ctx.forcing, ctx.grid, tau + s, s, u, ctx.controls
            ))
            for u in approx.members
        ],
        ctx.jobs,
    )
    target = approximate_attractor(
        ctx,
        tau + s,
        approx.metadata["ladder"],
        approx.metadata["ensemble_size"],
        approx.metadata["tol"],
        approx.metadata["seed"],
    )
    forward = hausdorff_semidistance(image, target.members)
    backward = hausdorff_semidistance(target.members, image)
    tolerance = max(tol, fraction * approx.diameter)
    passed = forward <= tolerance and backward <= tolerance
    log = logger.info if passed else logger.warning
    log(
        f"Invariance tau={tau:g}, s={s:g}: d(image, section)={forward:.3e}, "
        f"d(section, image)={backward:.3e}, tolerance {tolerance:.3e}"
    )
    return InvarianceReport(
        tau=tau,
        shift=s,
        image_to_section=forward,
        section_to_image=backward,
        tolerance=tolerance,
        diameter=approx.diameter,
        passed=passed,
    )


def check_attraction(
    ctx: ExperimentContext,
    approx: AttractorApprox,
    family: TemperedFamily,
    horizons: Sequence[float],
    norm: Norm = Norm.L2,
    tol: float = 1e-3,
) -> AttractionReport:
    """
    d(phi(t, tau - t, B(tau - t)), A(tau)) in the selected norm for every horizon.

    A family anchored elsewhere is moved to approx.tau; its radius profile,
    sampler and seed are kept. Passes when the last distance is below tol.
    """
    tau = approx.tau
    family = family if family.anchor == tau else replace(family, anchor=tau)
    distances = []
    for t in horizons:
        endpoints = pullback_endpoints(ctx, family, tau, t, seed=family.seed)
        distances.append(hausdorff_semidistance(endpoints, approx.members, norm))
    decreasing = all(
        b <= max(a, DECREASE_FLOOR) for a, b in zip(distances, distances[1:])
    )
    below = bool(distances) and distances[-1] <= tol
    logger.info(
        f"Attraction in {norm.value} at tau={tau:g}: last distance {distances[-1]:.3e} "
        f"(tol {tol:g})"
    )
    return AttractionReport(
        norm=norm.value,
        tau=tau,
        horizons=[float(t) for t in horizons],
        distances=distances,
        tolerance=tol,
        decreasing=decreasing,
        eventually_below=below,
        passed=below,
    )


def seed_independence(
    ctx: ExperimentContext,
    tau: float,
    ladder: Sequence[float],
    seeds: Sequence[int],
    tol: float = 1e-4,
) -> SeedIndependenceReport:
    """Mutual symmetric gaps of attractor approximations drawn with different seeds."""
    approximations = [approximate_attractor(ctx, tau, ladder, tol=tol, seed=s) for s in seeds]
    matrix = [
        [symmetric_gap(a.members, b.members) for b in approximations] for a in approximations
    ]
    worst = max(max(row) for row in matrix) if matrix else 0.0
    return SeedIndependenceReport(
        seeds=list(seeds),
        distances=matrix,
        tolerance=2.0 * tol,
        passed=worst <= 2.0 * tol,
    )


def save_attractor(approx: AttractorApprox, store: ArtifactStore, directory: str = "attractor") -> List[str]:
    """
    Write one CSV per member, the manifest and a gnuplot ladder file.

    Returns:
        Relative paths written
    """
    grid = approx.grid
    points = grid.points()
    axes = ["x", "y"][: grid.n]
    written = []
    names = []
    for index, member in enumerate(approx.members):
        name = f"member_{index}.csv"
        names.append(name)
        rows = (list(p) + [v] for p, v in zip(points, member.values.ravel()))
        written.append(store.write_csv(f"{directory}/{name}", axes + ["u"], rows))

    manifest = AttractorManifest(
        tau=approx.tau,
        horizons=approx.horizons,
        seed=approx.metadata["seed"],
        ensemble_size=approx.metadata["ensemble_size"],
        family=approx.metadata["family"],
        grid={"n": grid.n, "L": grid.L, "N": grid.N},
        diameter=approx.diameter,
        converged=approx.converged,
        history=approx.history,
        members=names,
    )
    written.append(store.write_json(f"{directory}/manifest.json", manifest.model_dump()))

    lines = ["# horizon gap"]
    for t, gap in zip(approx.metadata["ladder"][1:], approx.history):
        lines.append(f"{t:.17g} {gap:.17g}")
    written.append(store.write_text(f"{directory}/ladder.dat", "\n".join(lines) + "\n"))
    return written
