import numpy as np
import pytest
from scipy.special import ndtr

from mongelab import (
    NonIntegrableDensityError,
    ScalarTarget,
    gaussian_target,
    monotone_map,
    potential_from_map,
    quartic_well_target,
    wasserstein2_sq,
)
from mongelab.oracle1d import GRID


class TestMonotoneMap:
    def test_identity_for_flat(self):
        m = monotone_map(gaussian_target([0.0], 1.0))
        np.testing.assert_allclose(m.t, m.x, atol=1e-9)

    def test_gaussian_quantile_identity(self):
        m = monotone_map(gaussian_target([1.0], 2.0))
        xs = np.linspace(-4, 4, 81)
        np.testing.assert_allclose(m(xs), 2 * xs + 1, atol=1e-8)

    def test_strictly_increasing_quartic(self):
        m = monotone_map(quartic_well_target(0.05, -0.2))
        assert np.all(np.diff(m.t) > 0)

    def test_pushforward_cdf_match(self):
        # F_nu(T(x)) = Phi(x) on the grid
        tgt = quartic_well_target(0.03, 0.1)
        m = monotone_map(tgt)
        f_at_t = np.interp(m.t, m.nu_grid, m.nu_cdf)
        assert np.max(np.abs(f_at_t - ndtr(m.x))) <= 1e-6

    def test_non_integrable_detected(self):
        # e^{-f} = e^{x^4} grows faster than the Gaussian decays
        bad = ScalarTarget(
            1, "explosive", {},
            eval=lambda x: -np.sum(x**4, axis=1),
            grad=lambda x: -4 * x**3,
            hess=lambda x: (-12 * x**2).reshape(-1, 1, 1),
        )
        with pytest.raises(NonIntegrableDensityError):
            monotone_map(bad)


class TestPotentialFromMap:
    def test_identity_gives_zero(self):
        m = monotone_map(gaussian_target([0.0], 1.0))
        pot = potential_from_map(m)
        np.testing.assert_allclose(pot.phi, 0.0, atol=1e-8)

    def test_gaussian_antiderivative(self):
        # T = 2x + 1: phi = x^2/2 + x
        m = monotone_map(gaussian_target([1.0], 2.0))
        pot = potential_from_map(m)
        np.testing.assert_allclose(pot.phi, m.x**2 / 2 + m.x, atol=1e-8)

    def test_anchored_at_origin(self):
        pot = potential_from_map(monotone_map(quartic_well_target(0.05, 0.0)))
        assert pot(0.0) == pytest.approx(0.0, abs=1e-12)

    def test_jacobian_positive(self):
        m = monotone_map(quartic_well_target(0.05, -0.2))
        pot = potential_from_map(m)
        second = np.gradient(np.gradient(pot.phi, pot.x), pot.x)
        # 1 + phi'' = T' > 0 away from the grid edges
        inner = slice(50, -50)
        assert np.all(1 + second[inner] > 0)


class TestWasserstein:
    def test_flat_zero(self):
        assert wasserstein2_sq(gaussian_target([0.0], 1.0)) == pytest.approx(0.0, abs=1e-10)

    def test_worked_gaussians(self):
        assert wasserstein2_sq(gaussian_target([1.0], 2.0)) == pytest.approx(2.0, abs=1e-6)
        assert wasserstein2_sq(gaussian_target([0.5], 0.5)) == pytest.approx(0.5, abs=1e-6)

    def test_grid_default(self):
        assert GRID.shape == (2001,)
        assert GRID[0] == -8.0 and GRID[-1] == 8.0
