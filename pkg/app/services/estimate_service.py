import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import InvalidParameterError
from app.models.attractor import TemperedFamily
from app.models.grid import Field
from app.models.trajectory import DiagnosticQuantity, Trajectory
from app.schemas.report import EstimateReport, EstimateRow
from app.services import energy_service, model_service, solver_service
from app.services.attractor_service import pullback_endpoints, sample_family, validate_family
from app.services.context_service import ExperimentContext
from app.services.domain_service import THETA_SLOPE_MAX

logger = logging.getLogger(__name__)

# Cut-off cross term 2 max|theta'| sqrt(2) / k; sqrt(2) k bounds |x| on the support of theta'.
# Tighter than (3/k)(1 + e^{-lam tau}) and independent of tau.
CUTOFF_CROSS_CONSTANT = 2.0 * THETA_SLOPE_MAX * math.sqrt(2.0)
WINDOW = 2.0


@dataclass(frozen=True)
class BoundInputs:
    """Config-only quantities shared by the bound formulas at one (tau, t)."""

    lam: float
    tau: float
    t: float
    radius_sq: float
    absorbing_constant: float
    forcing_weight: float

    @property
    def absorbing(self) -> float:
        """R = e^{-lam t} r^2 + (2/lam) e^{-lam tau} W + C/lam."""
        lam = self.lam
        return (
            math.exp(-lam * self.t) * self.radius_sq
            + (2.0 / lam) * math.exp(-lam * self.tau) * self.forcing_weight
            + self.absorbing_constant / lam
        )

    @property
    def start_energy(self) -> float:
        """Q = e^{lam (tau - t)} r^2 + (C/lam) e^{lam tau} + (2/lam) W."""
        lam = self.lam
        return (
            math.exp(lam * (self.tau - self.t)) * self.radius_sq
            + (self.absorbing_constant / lam) * math.exp(lam * self.tau)
            + (2.0 / lam) * self.forcing_weight
        )

    @property
    def window_energy(self) -> float:
        """P = Q + (2/lam) W + (C/lam) e^{lam tau}."""
        lam = self.lam
        return (
            self.start_energy
            + (2.0 / lam) * self.forcing_weight
            + (self.absorbing_constant / lam) * math.exp(lam * self.tau)
        )

    @property
    def window_factor(self) -> float:
        """e^{2 lam} e^{-lam tau}."""
        return math.exp(self.lam * (WINDOW - self.tau))


def _safe_ratio(numerator: float, denominator: float) -> float:
    if denominator == 0.0:
        return math.inf if numerator > 0 else 0.0
    return numerator / denominator


def _scaled(coefficient: float, value: float) -> float:
    """coefficient * value with 0 * inf = 0."""
    return 0.0 if coefficient == 0.0 else coefficient * value


def _inputs(ctx: ExperimentContext, family: TemperedFamily, tau: float, t: float) -> BoundInputs:
    return BoundInputs(
        lam=ctx.lam,
        tau=tau,
        t=t,
        radius_sq=family.radius(tau - t) ** 2,
        absorbing_constant=ctx.model.absorbing_constant,
        forcing_weight=model_service.weighted_forcing_integral(ctx.forcing, ctx.lam, tau),
    )


def _row(
    ctx: ExperimentContext,
    quantity: str,
    horizon: float,
    observed: float,
    bound: float,
    radius: Optional[float] = None,
    note: Optional[str] = None,
) -> EstimateRow:
    slack = ctx.slack_constant * (ctx.controls.dt + ctx.grid.h ** 2) * max(1.0, abs(bound))
    margin = bound - observed
    passed = margin >= -slack
    logger.debug(
        f"{quantity} t={horizon:g}{'' if radius is None else f' k={radius:g}'}: "
        f"observed {observed:.6e} bound {bound:.6e}"
    )
    return EstimateRow(
        quantity=quantity,
        horizon=horizon,
        radius=radius,
        observed=observed,
        bound=bound,
        margin=margin,
        slack=slack,
        passed=passed,
        note=note,
    )


def first_passing_horizon(rows: Sequence[EstimateRow]) -> Optional[float]:
    """Smallest horizon from which every row at that and every larger horizon passes."""
    horizons = sorted({row.horizon for row in rows})
    verdict = {t: all(r.passed for r in rows if r.horizon == t) for t in horizons}
    first = None
    for t in reversed(horizons):
        if not verdict[t]:
            break
        first = t
    return first


def _finish(report: EstimateReport) -> EstimateReport:
    report.first_passing_horizon = first_passing_horizon(report.rows)
    report.passed = report.first_passing_horizon is not None
    log = logger.info if report.passed else logger.warning
    log(
        f"Estimate {report.tag} at tau={report.tau:g}: "
        f"{'pass' if report.passed else 'FAIL'} (first passing horizon "
        f"{report.first_passing_horizon})"
    )
    return report


def _family(ctx: ExperimentContext, tau: float, family: Optional[TemperedFamily]) -> TemperedFamily:
    family = family or ctx.anchored(tau)
    validate_family(family, ctx.lam)
    return family


def _trajectories(
    ctx: ExperimentContext, family: TemperedFamily, tau: float, t: float
) -> List[Trajectory]:
    initials = sample_family(family, ctx.grid, tau - t, ctx.ensemble_size, lam=ctx.lam)
    tasks = [
        (lambda u0=u0: solver_service.evolve(
            ctx.model, ctx.forcing, ctx.grid, u0, tau - t, tau, ctx.controls
        ))
        for u0 in initials
    ]
    return solver_service.run_ensemble(tasks, ctx.jobs)


def check_absorbing_L2(
    ctx: ExperimentContext,
    tau: float,
    horizons: Sequence[float],
    family: Optional[TemperedFamily] = None,
) -> EstimateReport:
    """
    Absorbing-ball bound for ||phi(t, tau - t, u0)||^2 with ||u0|| = r(tau - t).

    bound = e^{-lam t} r^2 + (2/lam) e^{-lam tau} W(tau) + C/lam,
    W(tau) = integral_{-inf}^tau e^{lam xi} ||g||^2, C = 2 ||phi1||_1.

    Raises:
        TemperednessError: If the family or the forcing is not tempered
        SolverError: On solver failures
    """
    family = _family(ctx, tau, family)
    report = EstimateReport(tag="absorbing_l2", tau=tau, parameters={"horizons": list(horizons)})
    for t in horizons:
        inputs = _inputs(ctx, family, tau, t)
        endpoints = pullback_endpoints(ctx, family, tau, t)
        observed = max(energy_service.l2_norm_sq(u) for u in endpoints)
        report.rows.append(_row(ctx, "l2_sq", t, observed, inputs.absorbing))
    report.constants = {
        "C": ctx.model.absorbing_constant,
        "W": model_service.weighted_forcing_integral(ctx.forcing, ctx.lam, tau),
        "lam": ctx.lam,
        "forcing_factor": 2.0 / ctx.lam,
    }
    return _finish(report)


def check_time_integrals(
    ctx: ExperimentContext,
    tau: float,
    horizon: float,
    family: Optional[TemperedFamily] = None,
) -> EstimateReport:
    """
    Weighted integrals over (tau - t, tau) and plain integrals over (tau - 2, tau).

    Bounds use R, Q = e^{lam(tau-t)} r^2 + (C/lam) e^{lam tau} + (2/lam) W and
    P = Q + (2/lam) W + (C/lam) e^{lam tau}:
      e^{-lam tau} int e^{lam xi} ||u||_p^p          <= R / (2 alpha1)
      e^{-lam tau} int e^{lam xi} ||u||_{H^1}^2      <= R / min(2, lam/2)
      int_{tau-2}^tau ||u||^2                          <= 2 e^{2 lam} e^{-lam tau} Q
      int_{tau-2}^tau ||grad u||^2                     <= e^{2 lam} e^{-lam tau} P / 2
      int_{tau-2}^tau ||u||_p^p                        <= e^{2 lam} e^{-lam tau} P / (2 alpha1)

    Raises:
        InvalidParameterError: If horizon < 2
    """
    if horizon < WINDOW:
        raise InvalidParameterError(f"time-integral check needs horizon >= 2, got {horizon}")
    family = _family(ctx, tau, family)
    lam = ctx.lam
    alpha1 = ctx.model.alpha1
    inputs = _inputs(ctx, family, tau, horizon)
    trajectories = _trajectories(ctx, family, tau, horizon)
    scale = math.exp(-lam * tau)
    window = (tau - WINDOW, tau)

    def worst(quantity: DiagnosticQuantity, weight: float, span=None) -> float:
        return max(
            energy_service.weighted_time_integral(traj, weight, quantity, span)
            for traj in trajectories
        )

    R = inputs.absorbing
    P = inputs.window_energy
    factor = inputs.window_factor
    lp_note = "alpha1 = 0: no L^p control" if alpha1 == 0 else None
    report = EstimateReport(
        tag="time_integrals", tau=tau, parameters={"horizon": horizon, "window": list(window)}
    )
    report.rows = [
        _row(ctx, "weighted_lp", horizon, scale * worst(DiagnosticQuantity.LP, lam),
             _safe_ratio(R, 2.0 * alpha1), note=lp_note),
        _row(ctx, "weighted_h1", horizon, scale * worst(DiagnosticQuantity.H1, lam),
             R / min(2.0, lam / 2.0)),
        _row(ctx, "window_l2", horizon, worst(DiagnosticQuantity.L2, 0.0, window),
             2.0 * factor * inputs.start_energy),
        _row(ctx, "window_grad", horizon, worst(DiagnosticQuantity.H1_SEMI, 0.0, window),
             factor * P / 2.0),
        _row(ctx, "window_lp", horizon, worst(DiagnosticQuantity.LP, 0.0, window),
             _safe_ratio(factor * P, 2.0 * alpha1), note=lp_note),
    ]
    report.constants = {
        "R": R,
        "Q": inputs.start_energy,
        "P": P,
        "window_factor": factor,
        "C": ctx.model.absorbing_constant,
        "W": inputs.forcing_weight,
    }
    if lp_note:
        report.notes.append(lp_note)
    return _finish(report)


def window_bounds(ctx: ExperimentContext, inputs: BoundInputs) -> Dict[str, float]:
    """(tau - 2, tau) integral bounds G (gradient), U (L^2), V (L^p)."""
    factor = inputs.window_factor
    P = inputs.window_energy
    return {
        "G": factor * P / 2.0,
        "U": 2.0 * factor * inputs.start_energy,
        "V": _safe_ratio(factor * P, 2.0 * ctx.model.alpha1),
    }


def h1_bound(ctx: ExperimentContext, inputs: BoundInputs, forcing_factor: float) -> float:
    """G + lam U + 2 alpha4 V + 2 ||phi3 + phi4||_1 + forcing_factor e^{-lam tau} W."""
    lam = ctx.lam
    w = window_bounds(ctx, inputs)
    return (
        w["G"]
        + lam * w["U"]
        + _scaled(2.0 * ctx.model.alpha4, w["V"])
        + 2.0 * ctx.model.phi34_l1
        + forcing_factor * math.exp(-lam * inputs.tau) * inputs.forcing_weight
    )


def check_H1_bound(
    ctx: ExperimentContext,
    tau: float,
    horizons: Sequence[float],
    family: Optional[TemperedFamily] = None,
) -> EstimateReport:
    """
    ||grad u(tau)||^2 + lam ||u(tau)||^2 + 2 alpha5 ||u(tau)||_p^p against
    G + lam U + 2 alpha4 V + 2 ||phi3 + phi4||_1 + e^{lam} e^{-lam tau} W.
    """
    family = _family(ctx, tau, family)
    lam = ctx.lam
    alpha5 = ctx.model.alpha5
    report = EstimateReport(tag="h1_bound", tau=tau, parameters={"horizons": list(horizons)})
    for t in horizons:
        if t <= WINDOW:
            raise InvalidParameterError(f"H1 check needs horizons > 2, got {t}")
        inputs = _inputs(ctx, family, tau, t)
        endpoints = pullback_endpoints(ctx, family, tau, t)
        observed = max(
            energy_service.h1_seminorm_sq(u)
            + lam * energy_service.l2_norm_sq(u)
            + 2.0 * alpha5 * energy_service.lp_norm_p(u, ctx.model.p)
            for u in endpoints
        )
        report.rows.append(_row(ctx, "h1_energy", t, observed, h1_bound(ctx, inputs, math.exp(lam))))
    report.constants = {
        "phi34_l1": ctx.model.phi34_l1,
        "alpha4": ctx.model.alpha4,
        "alpha5": alpha5,
        "forcing_factor": math.exp(lam),
    }
    return _finish(report)


def ut_bound(ctx: ExperimentContext, inputs: BoundInputs) -> float:
    """
    (1 + 2 alpha3) (e^{2 lam} e^{-lam tau} W + 2 ||phi3+phi4||_1 + max(1, alpha4/alpha5) H_prev)
    + (1/lam) int_{tau-1}^tau ||g_t||^2,

    H_prev = e^{lam} (G + lam U + 2 alpha4 V) + 2 ||phi3+phi4||_1 + e^{2 lam} e^{-lam tau} W
    bounds the H^1 energy one time unit earlier.
    """
    model = ctx.model
    lam = ctx.lam
    w = window_bounds(ctx, inputs)
    late_forcing = math.exp(2.0 * lam) * math.exp(-lam * inputs.tau) * inputs.forcing_weight
    h_prev = (
        math.exp(lam) * (w["G"] + lam * w["U"] + _scaled(2.0 * model.alpha4, w["V"]))
        + 2.0 * model.phi34_l1
        + late_forcing
    )
    if model.alpha4 == 0.0 and model.alpha5 == 0.0:
        ratio = 1.0
    else:
        ratio = max(1.0, _safe_ratio(model.alpha4, model.alpha5))
    derivative = model_service.forcing_derivative_window(ctx.forcing, inputs.tau)
    return (1.0 + 2.0 * model.alpha3) * (
        late_forcing + 2.0 * model.phi34_l1 + ratio * h_prev
    ) + derivative / lam


def time_derivative_norm_sq(current: Field, previous: Field, dt: float) -> float:
    """||(u(tau) - u(tau - dt)) / dt||^2."""
    return energy_service.l2_norm_sq(current - previous) / dt ** 2


def check_ut_bound(
    ctx: ExperimentContext,
    tau: float,
    horizons: Sequence[float],
    family: Optional[TemperedFamily] = None,
) -> EstimateReport:
    """Backward-difference ||u_t(tau)||^2 against the u_t bound."""
    family = _family(ctx, tau, family)
    report = EstimateReport(tag="ut_bound", tau=tau, parameters={"horizons": list(horizons)})
    for t in horizons:
        if t <= WINDOW:
            raise InvalidParameterError(f"u_t check needs horizons > 2, got {t}")
        inputs = _inputs(ctx, family, tau, t)
        initials = sample_family(family, ctx.grid, tau - t, ctx.ensemble_size, lam=ctx.lam)
        pairs = solver_service.run_ensemble(
            [
                (lambda u0=u0: solver_service.pullback_with_previous(
                    ctx.model, ctx.forcing, ctx.grid, tau, t, u0, ctx.controls
                ))
                for u0 in initials
            ],
            ctx.jobs,
        )
        observed = max(time_derivative_norm_sq(cur, prev, size) for cur, prev, size in pairs)
        report.rows.append(_row(ctx, "ut_sq", t, observed, ut_bound(ctx, inputs)))
    report.constants = {
        "alpha3": ctx.model.alpha3,
        "derivative_window": model_service.forcing_derivative_window(ctx.forcing, tau),
        "W": model_service.weighted_forcing_integral(ctx.forcing, ctx.lam, tau),
    }
    return _finish(report)


def tail_bound(ctx: ExperimentContext, inputs: BoundInputs, k: float) -> float:
    """
    e^{-lam t} r^2 + (2/lam) ||phi1||_{L^1(|x|>=k)} + (1/lam) e^{-lam tau} FT(k)
    + (3 sqrt(2) / k) R / min(2, lam/2).

    The cross term uses CUTOFF_CROSS_CONSTANT = 3 sqrt(2), not the looser
    (3/k)(1 + e^{-lam tau}) form, so it does not depend on tau.
    """
    lam = ctx.lam
    grid = ctx.grid
    r = grid.radius()
    phi1 = ctx.model.phi1 if ctx.model.phi1 is not None else np.zeros(grid.shape)
    phi1_tail = float(grid.cell_volume * np.sum(phi1[r >= k]))
    forcing_tail = model_service.forcing_tail_integral(ctx.forcing, grid, lam, inputs.tau, k)
    return (
        math.exp(-lam * inputs.t) * inputs.radius_sq
        + (2.0 / lam) * phi1_tail
        + (1.0 / lam) * math.exp(-lam * inputs.tau) * forcing_tail
        + (CUTOFF_CROSS_CONSTANT / k) * inputs.absorbing / min(2.0, lam / 2.0)
    )


def empirical_tail_radius(
    tails: Dict[float, Dict[float, float]], eta: float
) -> Tuple[Optional[float], Optional[float]]:
    """
    (K, T): T is the first horizon from which every later horizon has a radius
    with tail <= eta at it and at every larger tested radius; K is the largest
    such per-horizon radius over horizons >= T.
    """
    per_horizon: Dict[float, Optional[float]] = {}
    for t, by_radius in tails.items():
        radius = None
        for k in sorted(by_radius, reverse=True):
            if by_radius[k] <= eta:
                radius = k
            else:
                break
        per_horizon[t] = radius
    horizon = None
    for t in sorted(per_horizon, reverse=True):
        if per_horizon[t] is None:
            break
        horizon = t
    if horizon is None:
        return None, None
    radius = max(per_horizon[t] for t in per_horizon if t >= horizon)
    return radius, horizon


def check_tail(
    ctx: ExperimentContext,
    tau: float,
    eta: float,
    horizons: Sequence[float],
    radii: Sequence[float],
    family: Optional[TemperedFamily] = None,
) -> EstimateReport:
    """
    Tail masses of pullback endpoints against the cut-off bound.

    For each horizon t and radius k the theta-weighted mass at k and the plain
    mass outside sqrt(2) k are compared with the bound; k = 0 rows are flagged
    "radius too small" instead of failing.

    Raises:
        InvalidParameterError: If eta <= 0 or some k is outside [0, L/sqrt(2)]
    """
    if not eta > 0:
        raise InvalidParameterError(f"tail threshold must be positive, got {eta}")
    limit = ctx.grid.L / math.sqrt(2.0)
    for k in radii:
        if k < 0 or k > limit:
            raise InvalidParameterError(
                f"tail radius {k:g} outside [0, L/sqrt(2) = {limit:g}]"
            )
    family = _family(ctx, tau, family)
    radii = sorted(float(k) for k in radii)
    report = EstimateReport(
        tag="tail",
        tau=tau,
        parameters={"eta": eta, "horizons": list(horizons), "radii": radii},
    )
    tails: Dict[float, Dict[float, float]] = {}
    for t in horizons:
        inputs = _inputs(ctx, family, tau, t)
        endpoints = pullback_endpoints(ctx, family, tau, t)
        tails[t] = {}
        for k in radii:
            outer_radius = min(math.sqrt(2.0) * k, ctx.grid.L)
            outer = max(energy_service.tail_mass(u, outer_radius) for u in endpoints)
            weighted = max(energy_service.tail_mass(u, k, weighted=True) for u in endpoints)
            tails[t][k] = outer
            if k == 0.0:
                note = "radius too small"
                report.rows.append(
                    EstimateRow(
                        quantity="tail_weighted", horizon=t, radius=k, observed=weighted,
                        bound=math.inf, margin=math.inf, slack=math.inf, passed=True, note=note,
                    )
                )
                logger.warning(f"Tail check at t={t:g}: radius 0 is too small for a bound")
                continue
            bound = tail_bound(ctx, inputs, k)
            report.rows.append(_row(ctx, "tail_weighted", t, weighted, bound, radius=k))
            report.rows.append(_row(ctx, "tail_outer", t, outer, bound, radius=k))
    radius, horizon = empirical_tail_radius(tails, eta)
    report.empirical_radius = radius
    report.empirical_horizon = horizon
    report.constants = {"C_theta": CUTOFF_CROSS_CONSTANT, "eta": eta}
    if any(row.note == "radius too small" for row in report.rows):
        report.notes.append("k = 0 rows carry no bound (radius too small)")
    if radius is None:
        report.notes.append(f"no tested radius brings the tail below eta = {eta:g}")
    return _finish(report)


def check_h1_cauchy(
    ctx: ExperimentContext,
    tau: float,
    pairs: Sequence[Tuple[float, float]],
    family: Optional[TemperedFamily] = None,
) -> EstimateReport:
    """
    For w = u(tau; t_n) - u(tau; t_m) from matching family members:
    ||grad w||^2 + lam ||w||^2 <= 2 C_t ||w|| + alpha3 ||w||^2, C_t^2 the u_t bound.

    Raises:
        InvalidParameterError: If a pair does not satisfy 0 < t_n < t_m
    """
    family = _family(ctx, tau, family)
    lam = ctx.lam
    report = EstimateReport(
        tag="h1_cauchy", tau=tau, parameters={"pairs": [list(p) for p in pairs]}
    )
    for tn, tm in pairs:
        if not 0 < tn < tm:
            raise InvalidParameterError(f"Cauchy pair needs 0 < t_n < t_m, got ({tn}, {tm})")
        c_t = math.sqrt(
            max(
                ut_bound(ctx, _inputs(ctx, family, tau, tn)),
                ut_bound(ctx, _inputs(ctx, family, tau, tm)),
            )
        )
        near = pullback_endpoints(ctx, family, tau, tn)
        far = pullback_endpoints(ctx, family, tau, tm)
        worst: Optional[Tuple[float, float, float]] = None
        for a, b in zip(near, far):
            w = a - b
            l2 = energy_service.l2_norm_sq(w)
            observed = energy_service.h1_seminorm_sq(w) + lam * l2
            bound = 2.0 * c_t * math.sqrt(l2) + ctx.model.alpha3 * l2
            if worst is None or bound - observed < worst[0]:
                worst = (bound - observed, observed, bound)
        _, observed, bound = worst
        report.rows.append(_row(ctx, "h1_gap", tm, observed, bound, note=f"pair ({tn:g}, {tm:g})"))
    report.constants = {"alpha3": ctx.model.alpha3}
    return _finish(report)
