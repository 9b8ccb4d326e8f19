import enum
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np


class NonlinearityKind(str, enum.Enum):
    """Built-in families for f(x, s)."""
    POWER = "power"
    LINEAR = "linear"


class TemporalKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    POLYNOMIAL = "polynomial"


class SpatialKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    BUMP = "bump"


def gaussian_profile(r: np.ndarray) -> np.ndarray:
    return np.exp(-np.asarray(r, dtype=float) ** 2)


def bump_profile(r: np.ndarray, radius: float) -> np.ndarray:
    """exp(1 - 1/(1 - r^2/radius^2)) inside the ball, 0 outside; peak value 1."""
    z = (np.asarray(r, dtype=float) / radius) ** 2
    out = np.zeros_like(z)
    inside = z < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - z[inside]))
    return out


def young_coefficient(p: float, eps: float) -> float:
    """c with |a b| <= eps |a|^p / p + c |b|^q, i.e. c = eps^{-q/p} / q."""
    q = p / (p - 1.0)
    return eps ** (-q / p) / q


def derived_constants(
    kind: NonlinearityKind,
    p: float,
    beta: float,
    psi_amplitude: float,
    linear_coefficient: float,
    alpha3: Optional[float] = None,
) -> Dict[str, float]:
    """
    Structural constants alpha1..alpha5 implied by a built-in nonlinearity.

    Power kind with a nonzero source splits psi*s by Young's inequality; the
    source-free power kind uses the sharp constants.
    """
    if kind is NonlinearityKind.LINEAR:
        c = linear_coefficient
        damping = max(-c, 0.0)
        return {
            "alpha1": damping,
            "alpha2": abs(c),
            "alpha3": max(1.0, c) if alpha3 is None else alpha3,
            "alpha4": damping / 2.0,
            "alpha5": damping / 2.0,
        }
    declared = 1.0 if alpha3 is None else alpha3
    if psi_amplitude == 0.0:
        return {
            "alpha1": beta,
            "alpha2": beta,
            "alpha3": declared,
            "alpha4": beta / p,
            "alpha5": beta / p,
        }
    return {
        "alpha1": beta / 2.0,
        "alpha2": beta,
        "alpha3": declared,
        "alpha4": 3.0 * beta / (2.0 * p),
        "alpha5": beta / (2.0 * p),
    }


@dataclass(frozen=True)
class ModelSpec:
    """Equation data: decay rate, nonlinearity and its structural constants.

    ``phi1`` .. ``phi4`` are nonnegative profiles sampled on the grid; their
    norms are cached in ``phi1_l1``, ``phi2_l2``, ``phi2_lq`` and ``phi34_l1``.
    """

    lam: float
    p: float
    kind: NonlinearityKind = NonlinearityKind.POWER
    beta: float = 1.0
    psi_amplitude: float = 0.0
    linear_coefficient: float = 0.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    alpha4: float = 0.25
    alpha5: float = 0.25
    phi1: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    phi2: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    phi3: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    phi4: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    phi1_l1: float = 0.0
    phi2_l2: float = 0.0
    phi2_lq: float = 0.0
    phi34_l1: float = 0.0

    @property
    def q(self) -> float:
        """Conjugate exponent, 1/p + 1/q = 1."""
        return self.p / (self.p - 1.0)

    @property
    def absorbing_constant(self) -> float:
        """C = 2 ||phi1||_{L^1} of the L^2 energy inequality."""
        return 2.0 * self.phi1_l1

    def psi(self, r: np.ndarray) -> np.ndarray:
        """Source profile psi(x) as a function of |x|."""
        if self.kind is not NonlinearityKind.POWER or self.psi_amplitude == 0.0:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.psi_amplitude * gaussian_profile(r)

    def f(self, s: np.ndarray, psi: np.ndarray = 0.0) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind is NonlinearityKind.LINEAR:
            return self.linear_coefficient * s
        return -self.beta * np.abs(s) ** (self.p - 2.0) * s + psi

    def df_ds(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind is NonlinearityKind.LINEAR:
            return np.full_like(s, self.linear_coefficient)
        return -self.beta * (self.p - 1.0) * np.abs(s) ** (self.p - 2.0)

    def F(self, s: np.ndarray, psi: np.ndarray = 0.0) -> np.ndarray:
        """Antiderivative of f in s with F(x, 0) = 0."""
        s = np.asarray(s, dtype=float)
        if self.kind is NonlinearityKind.LINEAR:
            return 0.5 * self.linear_coefficient * s ** 2
        return -self.beta * np.abs(s) ** self.p / self.p + psi * s


@dataclass(frozen=True)
class ForcingSpec:
    """Separable forcing g(x, t) = a(t) rho(x)."""

    temporal: TemporalKind = TemporalKind.EXPONENTIAL
    spatial: SpatialKind = SpatialKind.GAUSSIAN
    amplitude: float = 1.0
    rate: float = 0.0
    degree: float = 0.0
    bump_radius: float = 1.0
    dimension: int = 1
    rho_norm_sq: float = 1.0

    def a(self, t: float) -> float:
        if self.temporal is TemporalKind.EXPONENTIAL:
            return self.amplitude * float(np.exp(self.rate * t))
        return self.amplitude * (1.0 + abs(t)) ** self.degree

    def a_prime(self, t: float) -> float:
        if self.temporal is TemporalKind.EXPONENTIAL:
            return self.amplitude * self.rate * float(np.exp(self.rate * t))
        if self.degree == 0.0:
            return 0.0
        return (
            self.amplitude
            * self.degree
            * (1.0 + abs(t)) ** (self.degree - 1.0)
            * float(np.sign(t))
        )

    def rho(self, r: np.ndarray) -> np.ndarray:
        if self.spatial is SpatialKind.GAUSSIAN:
            return gaussian_profile(r)
        return bump_profile(r, self.bump_radius)

    def g_norm_sq(self, t: float) -> float:
        """||g(t)||^2 in L^2."""
        return self.a(t) ** 2 * self.rho_norm_sq

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0
