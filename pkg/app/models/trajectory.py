import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.models.grid import Field, Grid


class Scheme(str, enum.Enum):
    """Time-stepping schemes."""
    IMEX = "imex"
    IMPLICIT = "implicit"


class DiagnosticQuantity(str, enum.Enum):
    """Per-step diagnostics selectable for time integrals."""
    L2 = "l2"
    H1_SEMI = "h1_semi"
    H1 = "h1"
    LP = "lp"
    POTENTIAL = "potential"


@dataclass(frozen=True)
class SolverControls:
    dt: float
    scheme: Scheme = Scheme.IMEX
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    monitor_energy: bool = False
    snapshot_every: Optional[int] = None
    tail_radii: Tuple[float, ...] = ()
    slack_constant: float = 10.0


@dataclass
class EnergyDiagnostics:
    """Per-time records of the functionals entering the estimates."""

    times: np.ndarray
    l2: np.ndarray
    h1_semi: np.ndarray
    lp: np.ndarray
    potential: np.ndarray
    tails: Dict[float, np.ndarray] = field(default_factory=dict)
    residual: Optional[np.ndarray] = None

    def select(self, quantity: DiagnosticQuantity) -> np.ndarray:
        if quantity is DiagnosticQuantity.L2:
            return self.l2
        if quantity is DiagnosticQuantity.H1_SEMI:
            return self.h1_semi
        if quantity is DiagnosticQuantity.H1:
            return self.l2 + self.h1_semi
        if quantity is DiagnosticQuantity.LP:
            return self.lp
        return self.potential


@dataclass
class Trajectory:
    """Time-stamped solution samples plus per-step diagnostics.

    ``samples`` may be sparse (see ``SolverControls.snapshot_every``) but always
    contains the first and last state; ``diagnostics`` covers every step.
    """

    grid: Grid
    t0: float
    t1: float
    dt: float
    samples: List[Tuple[float, Field]]
    diagnostics: Optional[EnergyDiagnostics] = None

    @property
    def final(self) -> Field:
        return self.samples[-1][1]

    @property
    def initial(self) -> Field:
        return self.samples[0][1]

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])


@dataclass(frozen=True)
class ContinuityGap:
    """Endpoint distance of two nearby initial states vs e^{(alpha3 - lam) t} eps."""

    epsilon: float
    observed: float
    predicted: float

    @property
    def within(self) -> bool:
        return self.observed <= self.predicted * (1.0 + 1e-8)
