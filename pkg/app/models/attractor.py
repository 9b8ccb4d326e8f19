import enum
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from app.models.grid import Field


class Norm(str, enum.Enum):
    L2 = "l2"
    H1 = "h1"


class SamplerKind(str, enum.Enum):
    """How members of a tempered family are drawn."""
    BAND_LIMITED = "band_limited"
    CANONICAL = "canonical"


@dataclass(frozen=True)
class TemperedFamily:
    """Balls of radius r(t) = R0 (1 + |anchor - t|)^sigma exp(gamma |anchor - t|)."""

    base_radius: float = 1.0
    sigma: float = 0.0
    gamma: float = 0.0
    anchor: float = 0.0
    sampler: SamplerKind = SamplerKind.BAND_LIMITED
    modes: int = 6
    seed: int = 0

    def radius(self, t: float) -> float:
        back = abs(self.anchor - t)
        return self.base_radius * (1.0 + back) ** self.sigma * float(np.exp(self.gamma * back))

    def weighted_size(self, lam: float, t: float) -> float:
        """e^{lam t} r(t)^2, which must vanish as t -> -infinity."""
        return float(np.exp(lam * t)) * self.radius(t) ** 2


@dataclass
class AttractorApprox:
    """Finite endpoint-set approximation of the attractor section at ``tau``."""

    tau: float
    members: List[Field]
    horizons: List[float]
    metadata: Dict[str, Any] = field(default_factory=dict)
    distances: np.ndarray = field(default=None, repr=False)
    converged: bool = False
    history: List[float] = field(default_factory=list)

    @property
    def diameter(self) -> float:
        if self.distances is None or self.distances.size == 0:
            return 0.0
        return float(np.max(self.distances))

    @property
    def grid(self):
        return self.members[0].grid
