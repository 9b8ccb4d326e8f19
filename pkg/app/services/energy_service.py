import logging
from typing import Optional, Tuple

import numpy as np
from scipy import integrate

from app.core.exceptions import InvalidParameterError
from app.models.equation import ForcingSpec, ModelSpec
from app.models.grid import Field, Grid
from app.models.trajectory import DiagnosticQuantity, Trajectory
from app.services.domain_service import cutoff_theta
from app.services.model_service import rho_tail_on_grid

logger = logging.getLogger(__name__)

DEFAULT_SLACK_CONSTANT = 10.0


def l2_norm_sq(u: Field) -> float:
    """||u||^2 = h^n sum u_i^2."""
    return float(u.grid.cell_volume * np.sum(u.values ** 2))


def gradient_components(u: Field):
    """Forward differences per axis with zero ghosts at both ends (N+1 per line)."""
    h = u.grid.h
    for axis in range(u.grid.n):
        width = [(0, 0)] * u.grid.n
        width[axis] = (1, 1)
        yield np.diff(np.pad(u.values, width), axis=axis) / h


def h1_seminorm_sq(u: Field) -> float:
    """||grad_h u||^2 including the node-to-boundary gaps."""
    total = sum(float(np.sum(d ** 2)) for d in gradient_components(u))
    return u.grid.cell_volume * total


def h1_norm_sq(u: Field) -> float:
    return l2_norm_sq(u) + h1_seminorm_sq(u)


def lp_norm_p(u: Field, p: float) -> float:
    """||u||_p^p = h^n sum |u_i|^p."""
    return float(u.grid.cell_volume * np.sum(np.abs(u.values) ** p))


def potential_integral(model: ModelSpec, u: Field) -> float:
    """h^n sum F(x_i, u_i)."""
    psi = model.psi(u.grid.radius())
    return float(u.grid.cell_volume * np.sum(model.F(u.values, psi)))


def tail_mass(u: Field, k: float, weighted: bool = False) -> float:
    """
    Mass of u outside the ball of radius k.

    Args:
        u: Field
        k: Radius, 0 <= k <= L
        weighted: Use the smooth cut-off theta(|x|^2 / k^2) instead of the indicator

    Returns:
        h^n sum_{|x_i| >= k} u_i^2, or its theta-weighted variant

    Raises:
        InvalidParameterError: If k < 0 or k > L
    """
    if k < 0:
        raise InvalidParameterError(f"tail radius must be >= 0, got {k}")
    if k > u.grid.L:
        raise InvalidParameterError(
            f"tail radius {k:g} exceeds the truncation radius L = {u.grid.L:g}"
        )
    if k == 0:
        return l2_norm_sq(u)
    r = u.grid.radius()
    if weighted:
        weights = cutoff_theta(r ** 2 / k ** 2)
    else:
        weights = (r >= k).astype(float)
    return float(u.grid.cell_volume * np.sum(weights * u.values ** 2))


def record_diagnostics(model: ModelSpec, u: Field) -> Tuple[float, float, float, float]:
    """(||u||^2, ||grad u||^2, ||u||_p^p, integral F) for one state."""
    return (
        l2_norm_sq(u),
        h1_seminorm_sq(u),
        lp_norm_p(u, model.p),
        potential_integral(model, u),
    )


def weighted_time_integral(
    traj: Trajectory,
    lam: float,
    quantity: DiagnosticQuantity,
    window: Optional[Tuple[float, float]] = None,
) -> float:
    """
    Trapezoid rule of e^{lam t} * (selected diagnostic) over the recorded steps.

    Args:
        traj: Trajectory with diagnostics
        lam: Exponential weight; 0 gives the plain time integral
        quantity: Which diagnostic to integrate
        window: Optional (lo, hi) restricting the integration range

    Returns:
        The weighted integral

    Raises:
        InvalidParameterError: If the trajectory carries no diagnostics
    """
    diag = traj.diagnostics
    if diag is None or diag.times.size == 0:
        raise InvalidParameterError("trajectory has no recorded diagnostics")
    t = diag.times
    values = diag.select(quantity)
    if window is not None:
        eps = 1e-9 * max(1.0, traj.dt)
        mask = (t >= window[0] - eps) & (t <= window[1] + eps)
        t = t[mask]
        values = values[mask]
    if t.size < 2:
        return 0.0
    return float(integrate.trapezoid(np.exp(lam * t) * values, t))


def energy_residual(
    model: ModelSpec, forcing: ForcingSpec, traj: Trajectory
) -> np.ndarray:
    """
    Per-step defect of the L^2 energy inequality.

    residual_j = (||u_{j+1}||^2 - ||u_j||^2)/dt_j + 2||grad u_{j+1}||^2
                 + (3/2) lam ||u_{j+1}||^2 + 2 alpha1 ||u_{j+1}||_p^p
                 - C - (2/lam) ||g(t_{j+1})||^2,   C = 2 ||phi1||_1

    Raises:
        InvalidParameterError: If the trajectory carries no diagnostics
    """
    diag = traj.diagnostics
    if diag is None or diag.times.size < 2:
        raise InvalidParameterError("energy residual needs at least two recorded steps")
    lam = model.lam
    g_sq = g_norm_sq_series(forcing, traj.grid, diag.times[1:])
    dt = np.diff(diag.times)
    return (
        np.diff(diag.l2) / dt
        + 2.0 * diag.h1_semi[1:]
        + 1.5 * lam * diag.l2[1:]
        + 2.0 * model.alpha1 * diag.lp[1:]
        - model.absorbing_constant
        - (2.0 / lam) * g_sq
    )


def g_norm_sq_series(forcing: ForcingSpec, grid: Grid, times: np.ndarray) -> np.ndarray:
    """Grid L^2 norms ||g(t)||^2 at the given times."""
    if forcing.is_zero:
        return np.zeros_like(times)
    rho_sq = rho_tail_on_grid(forcing, grid)
    return np.array([forcing.a(t) ** 2 for t in times]) * rho_sq


def energy_slack(
    forcing: ForcingSpec,
    traj: Trajectory,
    slack_constant: float = DEFAULT_SLACK_CONSTANT,
) -> np.ndarray:
    """c (dt + h^2) max(1, ||u+||^2, ||grad u+||^2, ||u+||_p^p, ||g||^2) per step."""
    diag = traj.diagnostics
    g_sq = g_norm_sq_series(forcing, traj.grid, diag.times[1:])
    magnitude = np.maximum.reduce(
        [np.ones_like(g_sq), diag.l2[1:], diag.h1_semi[1:], diag.lp[1:], g_sq]
    )
    return slack_constant * (traj.dt + traj.grid.h ** 2) * magnitude


def residual_violations(
    model: ModelSpec,
    forcing: ForcingSpec,
    traj: Trajectory,
    slack_constant: float = DEFAULT_SLACK_CONSTANT,
) -> int:
    """Number of steps whose energy residual exceeds the slack."""
    residual = energy_residual(model, forcing, traj)
    slack = energy_slack(forcing, traj, slack_constant)
    count = int(np.count_nonzero(residual > slack))
    if count:
        logger.warning(f"Energy residual exceeds slack on {count} of {residual.size} steps")
    return count
