import math

import numpy as np
import pytest
from scipy import integrate

from app.core.exceptions import TemperednessError
from app.models.equation import NonlinearityKind, derived_constants, young_coefficient
from app.schemas.experiment import ForcingBlock, ModelBlock
from app.services.model_service import (
    F_eval,
    build_forcing,
    build_model,
    dgdt_eval,
    f_eval,
    forcing_derivative_window,
    forcing_tail_integral,
    g_eval,
    gaussian_norm_sq,
    gaussian_tail_sq,
    rho_tail_on_grid,
    temporal_weight,
    verify_structure,
    weighted_forcing_integral,
)
from app.services.domain_service import build_grid


class TestDerivedConstants:
    """Test structural constants of the built-in nonlinearities."""

    def test_source_free_power(self):
        """Sharp constants without a source."""
        c = derived_constants(NonlinearityKind.POWER, 4.0, 2.0, 0.0, 0.0)
        assert c == {"alpha1": 2.0, "alpha2": 2.0, "alpha3": 1.0, "alpha4": 0.5, "alpha5": 0.5}

    def test_power_with_source(self):
        """Young splitting halves alpha1 and alpha5."""
        c = derived_constants(NonlinearityKind.POWER, 4.0, 1.0, 0.3, 0.0)
        assert c["alpha1"] == pytest.approx(0.5)
        assert c["alpha4"] == pytest.approx(3.0 / 8.0)
        assert c["alpha5"] == pytest.approx(1.0 / 8.0)

    def test_linear(self):
        """Linear kind records damping only for negative coefficients."""
        damped = derived_constants(NonlinearityKind.LINEAR, 2.0, 1.0, 0.0, -2.0)
        assert damped["alpha1"] == 2.0 and damped["alpha5"] == 1.0
        growing = derived_constants(NonlinearityKind.LINEAR, 2.0, 1.0, 0.0, 3.0)
        assert growing["alpha1"] == 0.0 and growing["alpha3"] == 3.0

    def test_young_inequality(self):
        """|ab| <= eps |a|^p / p + c |b|^q on a sample lattice."""
        p, eps = 4.0, 0.7
        q = p / (p - 1.0)
        c = young_coefficient(p, eps)
        a, b = np.meshgrid(np.linspace(-3, 3, 61), np.linspace(-3, 3, 61))
        assert np.all(np.abs(a * b) <= eps * np.abs(a) ** p / p + c * np.abs(b) ** q + 1e-12)

    def test_overrides(self):
        """Declared alphas replace the derived ones."""
        block = ModelBlock(beta=-1.0, alpha1=1.0, alpha2=1.0, alpha4=0.25, alpha5=0.25)
        c = block.constants()
        assert c["alpha1"] == 1.0 and c["alpha4"] == 0.25


class TestPointwiseEvaluation:
    """Test f, F, g and dg/dt at single points."""

    def test_power_nonlinearity(self, grid):
        """f = -s^3 and F = -s^4/4 without source."""
        model = build_model(ModelBlock(), grid)
        assert f_eval(model, 0.0, 2.0) == pytest.approx(-8.0)
        assert F_eval(model, 0.0, 2.0) == pytest.approx(-4.0)

    def test_source_enters_at_origin(self, grid):
        """psi(0) = psi_amplitude shifts f."""
        model = build_model(ModelBlock(psi_amplitude=0.5), grid)
        assert f_eval(model, [0.0], 0.0) == pytest.approx(0.5)

    def test_forcing(self, grid):
        """g = A e^{delta t} e^{-|x|^2} and its time derivative."""
        forcing = build_forcing(ForcingBlock(amplitude=2.0, rate=0.5), grid)
        assert g_eval(forcing, 1.0, 2.0) == pytest.approx(2.0 * math.e * math.exp(-1.0))
        assert dgdt_eval(forcing, 0.0, 0.0) == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "block",
        [
            ModelBlock(),
            ModelBlock(psi_amplitude=0.5),
            ModelBlock(p=3.0, beta=2.0),
            ModelBlock(kind="linear", linear_coefficient=-0.7),
        ],
    )
    @pytest.mark.parametrize("s", [-2.0, -0.3, 0.0, 0.7, 3.0])
    def test_potential_derivative(self, grid, block, s):
        """dF/ds matches f by central differences."""
        model = build_model(block, grid)
        h = 1e-5
        x = 0.3
        slope = (F_eval(model, x, s + h) - F_eval(model, x, s - h)) / (2.0 * h)
        assert slope == pytest.approx(f_eval(model, x, s), rel=1e-6, abs=1e-6)

    def test_polynomial_derivative_at_zero(self, grid):
        """a'(0) = 0 for the polynomial kind."""
        forcing = build_forcing(ForcingBlock(temporal="polynomial", degree=2.0), grid)
        assert dgdt_eval(forcing, 0.0, 0.0) == 0.0
        assert dgdt_eval(forcing, 0.0, 1.0) == pytest.approx(0.35 * 2.0 * 2.0)


class TestVerifyStructure:
    """Test the structural-condition sweep."""

    def test_default_model_passes(self, grid):
        """The default model satisfies every condition over 10^4 samples."""
        report = verify_structure(build_model(ModelBlock(), grid), grid)
        assert report.passed
        assert report.samples == 10_000
        assert {c.name for c in report.conditions} == {
            "dissipativity",
            "growth",
            "one_sided_lipschitz",
            "potential_bounds",
        }
        assert all(c.violations == 0 for c in report.conditions)

    def test_model_with_source_passes(self, grid):
        """Young-derived profiles make the sourced model consistent."""
        report = verify_structure(build_model(ModelBlock(psi_amplitude=0.8), grid), grid)
        assert report.passed

    def test_antidissipative_model_fails(self, grid):
        """f(s) = +s^3 with dissipative constants breaks dissipativity."""
        block = ModelBlock(beta=-1.0, alpha1=1.0, alpha2=1.0, alpha3=1.0, alpha4=0.25, alpha5=0.25)
        report = verify_structure(build_model(block, grid), grid)
        cond = report.condition("dissipativity")
        assert not report.passed
        assert not cond.passed
        assert cond.violations > 0
        assert abs(cond.witness_s) > 0
        assert len(cond.witness_x) == 1

    def test_linear_with_small_alpha3_fails(self, grid):
        """f(s) = s with alpha3 = 0.5 breaks the one-sided Lipschitz bound."""
        block = ModelBlock(kind="linear", linear_coefficient=1.0, alpha3=0.5)
        report = verify_structure(build_model(block, grid), grid)
        cond = report.condition("one_sided_lipschitz")
        assert not cond.passed
        assert cond.worst_margin == pytest.approx(-0.5, rel=1e-6)

    def test_unknown_condition(self, grid):
        """Looking up an unknown condition raises KeyError."""
        report = verify_structure(build_model(ModelBlock(), grid), grid, samples=100)
        with pytest.raises(KeyError):
            report.condition("monotonicity")


class TestForcingNorms:
    """Test spatial and temporal forcing integrals."""

    @pytest.mark.parametrize("k", [0.0, 0.5, 1.0, 2.0])
    def test_gaussian_tail_1d(self, k):
        """Closed 1D tail matches quadrature."""
        value, _ = integrate.quad(lambda x: math.exp(-2.0 * x * x), k, np.inf)
        assert gaussian_tail_sq(1, k) == pytest.approx(2.0 * value, abs=1e-10)

    @pytest.mark.parametrize("k", [0.0, 0.5, 1.5])
    def test_gaussian_tail_2d(self, k):
        """Closed 2D tail matches radial quadrature."""
        value, _ = integrate.quad(lambda r: 2.0 * math.pi * r * math.exp(-2.0 * r * r), k, np.inf)
        assert gaussian_tail_sq(2, k) == pytest.approx(value, abs=1e-10)

    def test_grid_quadrature_matches_closed_norm(self):
        """Midpoint sum of rho^2 agrees with (pi/2)^{n/2}."""
        grid = build_grid(1, 8.0, 255)
        forcing = build_forcing(ForcingBlock(), grid)
        assert rho_tail_on_grid(forcing, grid) == pytest.approx(gaussian_norm_sq(1), rel=1e-10)
        assert forcing.rho_norm_sq == gaussian_norm_sq(1)

    def test_bump_norm_uses_grid(self, grid):
        """The compact bump is normed by grid quadrature."""
        forcing = build_forcing(ForcingBlock(spatial="bump", bump_radius=2.0), grid)
        assert forcing.rho_norm_sq == pytest.approx(rho_tail_on_grid(forcing, grid))
        assert 0.0 < forcing.rho_norm_sq < 4.0

    def test_exponential_weight_closed_form(self, grid):
        """int e^{lam xi} A^2 e^{2 delta xi} = A^2 e^{kappa tau}/kappa."""
        forcing = build_forcing(ForcingBlock(amplitude=0.5, rate=0.25), grid)
        expected = 0.25 * math.exp(1.5 * 2.0) / 1.5
        assert temporal_weight(forcing, 1.0, 2.0) == pytest.approx(expected, rel=1e-14)

    def test_polynomial_weight(self, grid):
        """int_{-inf}^0 e^xi (1 + |xi|)^2 d xi = 5."""
        forcing = build_forcing(ForcingBlock(temporal="polynomial", amplitude=1.0, degree=1.0), grid)
        assert temporal_weight(forcing, 1.0, 0.0) == pytest.approx(5.0, rel=1e-8)

    def test_polynomial_weight_past_zero(self, grid):
        """Degree 0 reduces to the stationary closed form for tau > 0."""
        forcing = build_forcing(ForcingBlock(temporal="polynomial", amplitude=1.0), grid)
        assert temporal_weight(forcing, 1.0, 1.5) == pytest.approx(math.exp(1.5), rel=1e-8)

    def test_untempered_forcing(self, grid):
        """lambda + 2 delta <= 0 raises TemperednessError."""
        forcing = build_forcing(ForcingBlock(rate=-0.6), grid)
        with pytest.raises(TemperednessError):
            weighted_forcing_integral(forcing, 1.0, 0.0)

    @pytest.mark.parametrize(
        "block",
        [
            ForcingBlock(rate=-0.25),
            ForcingBlock(),
            ForcingBlock(rate=0.5),
            ForcingBlock(temporal="polynomial", degree=1.0),
        ],
    )
    def test_weighted_integral_nondecreasing_in_tau(self, grid, block):
        forcing = build_forcing(block, grid)
        values = [weighted_forcing_integral(forcing, 1.0, tau) for tau in np.linspace(-5.0, 5.0, 21)]
        assert values[0] > 0.0
        assert all(b >= a * (1.0 - 1e-8) for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("spatial", ["gaussian", "bump"])
    def test_tail_integral_shrinks_with_radius(self, grid, spatial):
        """Nonincreasing in k and vanishing far out."""
        forcing = build_forcing(ForcingBlock(spatial=spatial, bump_radius=1.5), grid)
        tails = [forcing_tail_integral(forcing, grid, 1.0, 0.0, k) for k in np.linspace(0.0, 7.0, 29)]
        assert tails[0] > 0.0
        assert all(b <= a + 1e-15 for a, b in zip(tails, tails[1:]))
        assert tails[-1] < 1e-20

    def test_tail_integral_factorizes(self, grid):
        """Weighted tail integral is the temporal weight times the spatial tail."""
        forcing = build_forcing(ForcingBlock(), grid)
        value = forcing_tail_integral(forcing, grid, 1.0, 0.0, 1.0)
        assert value == pytest.approx(0.35 ** 2 * gaussian_tail_sq(1, 1.0), rel=1e-12)

    def test_derivative_window(self, grid):
        """Stationary forcing has no time derivative."""
        assert forcing_derivative_window(build_forcing(ForcingBlock(), grid), 0.0) == 0.0
        growing = build_forcing(ForcingBlock(amplitude=1.0, rate=0.5), grid)
        expected = 0.5 * (1.0 - math.exp(-1.0)) / 2.0 * gaussian_norm_sq(1)
        assert forcing_derivative_window(growing, 0.0) == pytest.approx(expected, rel=1e-12)
