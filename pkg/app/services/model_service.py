import logging
import math
from dataclasses import replace
from typing import Sequence, Tuple, Union

import numpy as np
from scipy import integrate, special

from app.core.exceptions import InvalidParameterError, TemperednessError
from app.models.equation import (
    ForcingSpec,
    ModelSpec,
    NonlinearityKind,
    SpatialKind,
    TemporalKind,
    young_coefficient,
)
from app.models.grid import Grid
from app.schemas.experiment import ForcingBlock, ModelBlock
from app.schemas.report import ConditionResult, StructureReport

logger = logging.getLogger(__name__)

Point = Union[float, Sequence[float], np.ndarray]

PASS_TOLERANCE = 1e-9
SLOPE_STEP = 1e-4


def _radius(x: Point) -> float:
    return float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))


def build_model(block: ModelBlock, grid: Grid) -> ModelSpec:
    """
    Build the equation data and its structural profiles on a grid.

    Args:
        block: Validated model block of the experiment config
        grid: Grid the profiles phi1..phi4 are sampled on

    Returns:
        ModelSpec with constants and cached profile norms
    """
    constants = block.constants()
    p = block.exponent
    q = p / (p - 1.0)
    r = grid.radius()
    zeros = np.zeros(grid.shape)
    phi1 = phi2 = phi3 = phi4 = zeros

    if block.kind is NonlinearityKind.POWER and block.psi_amplitude != 0.0:
        beta = block.beta
        psi = np.abs(block.psi_amplitude * np.exp(-(r ** 2)))
        phi1 = young_coefficient(p, p * beta / 2.0) * psi ** q
        phi2 = psi
        phi3 = young_coefficient(p, beta / 2.0) * psi ** q
        phi4 = phi3

    w = grid.cell_volume
    model = ModelSpec(
        lam=block.lam,
        p=p,
        kind=block.kind,
        beta=block.beta,
        psi_amplitude=block.psi_amplitude if block.kind is NonlinearityKind.POWER else 0.0,
        linear_coefficient=block.linear_coefficient,
        phi1=phi1,
        phi2=phi2,
        phi3=phi3,
        phi4=phi4,
        phi1_l1=float(w * np.sum(phi1)),
        phi2_l2=float(np.sqrt(w * np.sum(phi2 ** 2))),
        phi2_lq=float((w * np.sum(phi2 ** q)) ** (1.0 / q)),
        phi34_l1=float(w * np.sum(phi3 + phi4)),
        **constants,
    )
    logger.debug(
        f"Built {model.kind.value} model: lam={model.lam:g}, p={model.p:g}, "
        f"alphas=({model.alpha1:g}, {model.alpha2:g}, {model.alpha3:g}, "
        f"{model.alpha4:g}, {model.alpha5:g})"
    )
    return model


def gaussian_norm_sq(n: int) -> float:
    """Integral of e^{-2|x|^2} over R^n."""
    return (math.pi / 2.0) ** (n / 2.0)


def gaussian_tail_sq(n: int, k: float) -> float:
    """Integral of e^{-2|x|^2} over |x| >= k in R^n (n = 1 or 2)."""
    if n == 1:
        return math.sqrt(math.pi / 2.0) * float(special.erfc(math.sqrt(2.0) * k))
    return (math.pi / 2.0) * math.exp(-2.0 * k * k)


def rho_tail_on_grid(forcing: ForcingSpec, grid: Grid, k: float = 0.0) -> float:
    """Midpoint quadrature of rho^2 over the nodes with |x| >= k."""
    r = grid.radius()
    values = forcing.rho(r) ** 2
    return float(grid.cell_volume * np.sum(values[r >= k]))


def build_forcing(block: ForcingBlock, grid: Grid) -> ForcingSpec:
    """Build the forcing spec with ||rho||^2 cached (closed form for the Gaussian)."""
    forcing = ForcingSpec(
        temporal=block.temporal,
        spatial=block.spatial,
        amplitude=block.amplitude,
        rate=block.rate,
        degree=block.degree,
        bump_radius=block.bump_radius,
        dimension=grid.n,
    )
    if block.spatial is SpatialKind.GAUSSIAN:
        norm_sq = gaussian_norm_sq(grid.n)
    else:
        norm_sq = rho_tail_on_grid(forcing, grid)
    return replace(forcing, rho_norm_sq=norm_sq)


def f_eval(model: ModelSpec, x: Point, s):
    """f(x, s) for the configured nonlinearity."""
    return model.f(s, model.psi(_radius(x)))


def F_eval(model: ModelSpec, x: Point, s):
    """F(x, s) = integral_0^s f(x, r) dr."""
    return model.F(s, model.psi(_radius(x)))


def g_eval(forcing: ForcingSpec, x: Point, t: float) -> float:
    """g(x, t) = a(t) rho(x)."""
    return forcing.a(t) * float(forcing.rho(_radius(x)))


def dgdt_eval(forcing: ForcingSpec, x: Point, t: float) -> float:
    """dg/dt(x, t) = a'(t) rho(x)."""
    return forcing.a_prime(t) * float(forcing.rho(_radius(x)))


def forcing_field(forcing: ForcingSpec, grid: Grid, t: float) -> np.ndarray:
    """g(., t) sampled at every interior node."""
    if forcing.is_zero:
        return np.zeros(grid.shape)
    return forcing.a(t) * forcing.rho(grid.radius())


def _condition(name, lhs_margin, scale, x_values, s_values) -> ConditionResult:
    tolerance = PASS_TOLERANCE * (1.0 + scale)
    normalized = lhs_margin / (1.0 + scale)
    worst = int(np.argmin(normalized))
    violations = int(np.count_nonzero(lhs_margin < -tolerance))
    return ConditionResult(
        name=name,
        passed=violations == 0,
        worst_margin=float(lhs_margin[worst]),
        witness_x=[float(c) for c in np.atleast_1d(x_values[worst])],
        witness_s=float(s_values[worst]),
        violations=violations,
    )


def verify_structure(
    model: ModelSpec,
    grid: Grid,
    s_range: Tuple[float, float] = (-10.0, 10.0),
    samples: int = 10_000,
) -> StructureReport:
    """
    Sample the structural conditions pointwise with the model's declared constants.

    s runs over an even lattice of ``samples`` points in ``s_range``; x cycles
    through the grid nodes. Violations are reported, not raised.

    Args:
        model: Model under test
        grid: Grid on which the profiles phi1..phi4 live
        s_range: Closed interval of s values
        samples: Number of (x, s) pairs, at least 100

    Returns:
        StructureReport with one entry per condition

    Raises:
        InvalidParameterError: If samples < 100 or the range is empty
    """
    if samples < 100:
        raise InvalidParameterError(f"verify_structure needs >= 100 samples, got {samples}")
    s_lo, s_hi = float(s_range[0]), float(s_range[1])
    if not s_lo < s_hi:
        raise InvalidParameterError(f"empty s range [{s_lo}, {s_hi}]")

    s = np.linspace(s_lo, s_hi, samples)
    node = np.arange(samples) % grid.size
    points = grid.points()[node]
    r = grid.radius().ravel()[node]
    psi = model.psi(r)
    phi = [
        np.asarray(prof, dtype=float).ravel()[node] if prof is not None else np.zeros(samples)
        for prof in (model.phi1, model.phi2, model.phi3, model.phi4)
    ]
    p = model.p
    abs_s = np.abs(s)

    with np.errstate(over="ignore", invalid="ignore"):
        f = model.f(s, psi)
        F = model.F(s, psi)
        step = SLOPE_STEP * np.maximum(1.0, abs_s)
        slope = (model.f(s + step, psi) - model.f(s - step, psi)) / (2.0 * step)

    power = abs_s ** p
    results = []

    # f(x,s) s <= -alpha1 |s|^p + phi1(x)
    lhs = f * s
    rhs = -model.alpha1 * power + phi[0]
    results.append(
        _condition("dissipativity", rhs - lhs, np.maximum(np.abs(lhs), np.abs(rhs)), points, s)
    )

    # |f(x,s)| <= alpha2 |s|^{p-1} + phi2(x)
    lhs = np.abs(f)
    rhs = model.alpha2 * abs_s ** (p - 1.0) + phi[1]
    results.append(
        _condition("growth", rhs - lhs, np.maximum(lhs, rhs), points, s)
    )

    # df/ds <= alpha3
    results.append(
        _condition(
            "one_sided_lipschitz",
            model.alpha3 - slope,
            np.maximum(np.abs(slope), model.alpha3),
            points,
            s,
        )
    )

    # -phi4 - alpha4 |s|^p <= F <= phi3 - alpha5 |s|^p
    upper = phi[2] - model.alpha5 * power
    lower = -phi[3] - model.alpha4 * power
    margin = np.minimum(upper - F, F - lower)
    scale = np.maximum.reduce([np.abs(F), np.abs(upper), np.abs(lower)])
    results.append(_condition("potential_bounds", margin, scale, points, s))

    report = StructureReport(
        kind=model.kind.value,
        samples=samples,
        s_range=(s_lo, s_hi),
        conditions=results,
    )
    for cond in results:
        if cond.passed:
            logger.info(f"Structural condition {cond.name} holds (worst margin {cond.worst_margin:.3e})")
        else:
            logger.warning(
                f"Structural condition {cond.name} violated at x={cond.witness_x}, "
                f"s={cond.witness_s:g} ({cond.violations} samples)"
            )
    return report


def require_tempered(forcing: ForcingSpec, lam: float) -> None:
    """Raise TemperednessError unless the weighted forcing integral is finite."""
    if forcing.temporal is TemporalKind.EXPONENTIAL and lam + 2.0 * forcing.rate <= 0:
        raise TemperednessError(
            f"lambda + 2*delta = {lam + 2.0 * forcing.rate:g} <= 0: "
            "forcing is not tempered"
        )


def _polynomial_tail_bound(lam: float, m: float, s0: float) -> float:
    """Bound on integral_{s0}^inf e^{-lam s}(1+s)^{2m} ds, valid for s0 >= 4m/lam - 1."""
    return (2.0 / lam) * (1.0 + s0) ** (2.0 * m) * math.exp(-lam * s0)


def temporal_weight(
    forcing: ForcingSpec, lam: float, tau: float, rel_tol: float = 1e-10
) -> float:
    """
    integral_{-inf}^tau e^{lam xi} a(xi)^2 d xi.

    Raises:
        TemperednessError: If lambda + 2*delta <= 0 for the exponential kind
    """
    require_tempered(forcing, lam)
    A = forcing.amplitude
    if A == 0.0:
        return 0.0
    if forcing.temporal is TemporalKind.EXPONENTIAL:
        kappa = lam + 2.0 * forcing.rate
        return A * A * math.exp(kappa * tau) / kappa

    m = forcing.degree

    def integrand(xi: float) -> float:
        return math.exp(lam * xi) * (1.0 + abs(xi)) ** (2.0 * m)

    s0 = max(1.0, 4.0 * m / lam - 1.0, -tau + 1.0)
    while True:
        lower = -s0
        if tau > 0:
            left, _ = integrate.quad(integrand, lower, 0.0, epsabs=0.0, epsrel=rel_tol, limit=200)
            right, _ = integrate.quad(integrand, 0.0, tau, epsabs=0.0, epsrel=rel_tol, limit=200)
            value = left + right
        else:
            value, _ = integrate.quad(integrand, lower, tau, epsabs=0.0, epsrel=rel_tol, limit=200)
        tail = _polynomial_tail_bound(lam, m, s0)
        if tail <= rel_tol * value:
            break
        s0 *= 2.0
    logger.debug(f"Polynomial forcing weight truncated at xi_min={-s0:g}")
    return A * A * value


def weighted_forcing_integral(
    forcing: ForcingSpec, lam: float, tau: float, rel_tol: float = 1e-10
) -> float:
    """
    integral_{-inf}^tau e^{lam xi} ||g(xi)||^2 d xi.

    Args:
        forcing: Tempered forcing
        lam: Decay rate lambda
        tau: Upper time limit
        rel_tol: Relative accuracy of the truncated quadrature (polynomial kind)

    Returns:
        The weighted integral, closed form for the exponential kind

    Raises:
        TemperednessError: If the forcing is not tempered
    """
    return temporal_weight(forcing, lam, tau, rel_tol) * forcing.rho_norm_sq


def rho_tail_sq(forcing: ForcingSpec, grid: Grid, k: float) -> float:
    """integral_{|x| >= k} rho^2, closed form for the Gaussian, grid quadrature for the bump."""
    if k < 0:
        raise InvalidParameterError(f"tail radius must be >= 0, got {k}")
    if forcing.spatial is SpatialKind.GAUSSIAN:
        return gaussian_tail_sq(grid.n, k)
    if k == 0.0:
        return forcing.rho_norm_sq
    return rho_tail_on_grid(forcing, grid, k)


def forcing_tail_integral(
    forcing: ForcingSpec, grid: Grid, lam: float, tau: float, k: float
) -> float:
    """
    integral_{-inf}^tau integral_{|x|>=k} e^{lam xi} |g(x, xi)|^2 dx d xi.

    Raises:
        InvalidParameterError: If k < 0
        TemperednessError: If the forcing is not tempered
    """
    spatial = rho_tail_sq(forcing, grid, k)
    return temporal_weight(forcing, lam, tau) * spatial


def forcing_derivative_window(forcing: ForcingSpec, tau: float, width: float = 1.0) -> float:
    """integral_{tau-width}^tau ||dg/dt||^2 d xi."""
    A = forcing.amplitude
    if A == 0.0:
        return 0.0
    lo = tau - width
    if forcing.temporal is TemporalKind.EXPONENTIAL:
        delta = forcing.rate
        if delta == 0.0:
            return 0.0
        value = A * A * delta * (math.exp(2.0 * delta * tau) - math.exp(2.0 * delta * lo)) / 2.0
        return value * forcing.rho_norm_sq
    if forcing.degree == 0.0:
        return 0.0
    points = [0.0] if lo < 0.0 < tau else None
    value, _ = integrate.quad(lambda xi: forcing.a_prime(xi) ** 2, lo, tau, points=points)
    return value * forcing.rho_norm_sq
