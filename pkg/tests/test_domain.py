import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.exceptions import GridMismatchError, InvalidParameterError
from app.models.grid import Field
from app.services.domain_service import (
    THETA_SLOPE_MAX,
    axis_eigenvalues,
    build_grid,
    cutoff_theta,
    cutoff_theta_slope,
    dirichlet_eigenpair,
    laplacian_apply,
    laplacian_matrix,
)
from app.services.energy_service import l2_norm_sq


class TestBuildGrid:
    """Test grid construction."""

    def test_spacing_and_nodes(self):
        """Nodes are symmetric interior points with h = 2L/(N+1)."""
        grid = build_grid(1, 8.0, 255)
        assert grid.h == pytest.approx(1.0 / 16.0)
        assert grid.nodes[0] == pytest.approx(-8.0 + grid.h)
        assert grid.nodes[-1] == pytest.approx(8.0 - grid.h)
        np.testing.assert_allclose(grid.nodes, -grid.nodes[::-1])

    def test_two_dimensional_shape(self, grid_2d):
        """A 2D grid stores N x N interior samples."""
        assert grid_2d.shape == (15, 15)
        assert grid_2d.size == 225
        assert grid_2d.points().shape == (225, 2)
        assert grid_2d.cell_volume == pytest.approx(grid_2d.h ** 2)

    def test_rejects_all_problems_at_once(self):
        """Every invalid argument is named in one error."""
        with pytest.raises(InvalidParameterError) as exc:
            build_grid(3, -1.0, 2)
        message = exc.value.detail
        assert "dimension" in message
        assert "truncation radius" in message
        assert "3 interior points" in message
        assert exc.value.exit_code == 2


class TestField:
    """Test grid functions."""

    def test_values_are_read_only(self, grid):
        """Field samples cannot be mutated in place."""
        u = Field(grid, np.ones(grid.N))
        with pytest.raises(ValueError):
            u.values[0] = 2.0

    def test_rejects_non_finite(self, grid):
        """NaN samples are refused."""
        values = np.zeros(grid.N)
        values[3] = np.nan
        with pytest.raises(InvalidParameterError):
            Field(grid, values)

    def test_rejects_wrong_size(self, grid):
        """Sample count must match the grid."""
        with pytest.raises(InvalidParameterError):
            Field(grid, np.zeros(grid.N + 1))

    def test_mixing_grids_fails(self, grid):
        """Arithmetic across grids raises GridMismatchError."""
        other = build_grid(1, 4.0, 63)
        with pytest.raises(GridMismatchError):
            Field(grid, np.zeros(63)) + Field(other, np.zeros(63))


class TestLaplacian:
    """Test the discrete Laplacian."""

    def test_matches_sparse_matrix_1d(self, grid):
        """Stencil application equals the sparse operator in 1D."""
        rng = np.random.default_rng(3)
        u = Field(grid, rng.standard_normal(grid.shape))
        expected = laplacian_matrix(grid) @ u.values.ravel()
        np.testing.assert_allclose(laplacian_apply(grid, u).values.ravel(), expected, atol=1e-9)

    def test_matches_sparse_matrix_2d(self, grid_2d):
        """Stencil application equals the Kronecker operator in 2D."""
        rng = np.random.default_rng(4)
        u = Field(grid_2d, rng.standard_normal(grid_2d.shape))
        expected = laplacian_matrix(grid_2d) @ u.values.ravel()
        np.testing.assert_allclose(
            laplacian_apply(grid_2d, u).values.ravel(), expected, atol=1e-9
        )

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.sampled_from([1, 2]))
    def test_symmetric(self, seed, n):
        """<Delta_h u, v> = <u, Delta_h v> for random fields."""
        grid = build_grid(n, 4.0, 15)
        rng = np.random.default_rng(seed)
        u = Field(grid, rng.standard_normal(grid.shape))
        v = Field(grid, rng.standard_normal(grid.shape))
        left = float(np.sum(laplacian_apply(grid, u).values * v.values))
        right = float(np.sum(u.values * laplacian_apply(grid, v).values))
        assert left == pytest.approx(right, rel=1e-10, abs=1e-9)

    def test_grid_mismatch(self, grid, grid_2d):
        """Applying the operator of another grid fails."""
        with pytest.raises(GridMismatchError):
            laplacian_apply(grid_2d, grid.zeros())

    @pytest.mark.parametrize("dims", [(1, 8.0, 63), (2, 4.0, 15)])
    def test_first_eigenpair(self, dims):
        """-Delta_h e1 = mu_1h e1 with unit-norm e1."""
        grid = build_grid(*dims)
        mu, e1 = dirichlet_eigenpair(grid)
        assert l2_norm_sq(e1) == pytest.approx(1.0, rel=1e-12)
        np.testing.assert_allclose(
            laplacian_apply(grid, e1).values, -mu * e1.values, atol=1e-10
        )
        assert mu == pytest.approx(grid.n * axis_eigenvalues(grid)[0], rel=1e-12)

    def test_eigenvalue_approaches_continuum(self):
        """mu_1h tends to (pi / 2L)^2 under refinement."""
        mu, _ = dirichlet_eigenpair(build_grid(1, 8.0, 511))
        assert mu == pytest.approx((np.pi / 16.0) ** 2, rel=1e-5)


class TestCutoff:
    """Test the smooth cut-off."""

    def test_plateaus(self):
        """theta vanishes on [0, 1] and equals 1 from 2 on."""
        assert cutoff_theta(0.0) == 0.0
        assert cutoff_theta(1.0) == 0.0
        assert cutoff_theta(1.5) == pytest.approx(0.5)
        assert cutoff_theta(2.0) == 1.0
        assert cutoff_theta(7.0) == 1.0

    def test_vectorized(self):
        """Arrays come back as arrays of the same shape."""
        out = cutoff_theta(np.array([[0.5, 1.25], [1.75, 3.0]]))
        assert out.shape == (2, 2)
        assert np.all((out >= 0.0) & (out <= 1.0))

    def test_rejects_negative(self):
        """Negative arguments are outside the domain."""
        with pytest.raises(InvalidParameterError):
            cutoff_theta(-0.1)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=0.0, max_value=10.0), st.floats(min_value=0.0, max_value=10.0))
    def test_monotone(self, a, b):
        """theta is nondecreasing."""
        lo, hi = min(a, b), max(a, b)
        assert cutoff_theta(lo) <= cutoff_theta(hi) + 1e-15

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=0.0, max_value=10.0))
    def test_slope_bound(self, s):
        """|theta'| never exceeds 3/2."""
        assert 0.0 <= cutoff_theta_slope(s) <= THETA_SLOPE_MAX
