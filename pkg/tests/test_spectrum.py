"""
Tests for kernel spectra, assumption constants and the Nyström error curve.
"""

import math

import numpy as np
import pytest
from scipy import integrate

from kernels import BaseKernel
from spectrum import (SpectrumReport, assumption_constants, ball_moment, count_inversions, eigen_condition_check,
                      gaussian_eigenfunctions, gaussian_eigenvalues_closed_form, gaussian_empirical_eigenvalues,
                      inverse_kernel_spectrum, multi_indices, nystrom_error_curve, periodic_eigenvalues,
                      periodic_eigenvalues_bessel, periodic_sine_projection, periodized_gaussian_eigenvalues,
                      theoretical_sample_size)

BASE = BaseKernel.periodic(math.pi, math.sqrt(0.5))


class TestPeriodicEigenvalues:
    """Cosine coefficients of the periodic kernel."""

    def test_coefficients_sum_to_kernel_at_zero(self):
        lam = periodic_eigenvalues(BASE, 200, 2048).eigenvalues
        assert lam[0] + 2.0 * lam[1:].sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(lam >= -1e-10)

    def test_matches_bessel(self):
        lam = periodic_eigenvalues(BASE, 30, 2048).eigenvalues
        np.testing.assert_allclose(lam, periodic_eigenvalues_bessel(BASE, 30), atol=1e-12)

    def test_quadrature_converged(self):
        coarse = periodic_eigenvalues(BASE, 20, 1024).eigenvalues
        fine = periodic_eigenvalues(BASE, 20, 2048).eigenvalues
        assert np.max(np.abs(coarse - fine)) < 1e-8

    @pytest.mark.parametrize("j", range(1, 6))
    def test_sine_projection_recovers_eigenvalue(self, j):
        lam = periodic_eigenvalues_bessel(BASE, 5)
        assert periodic_sine_projection(BASE, j, 0.3) == pytest.approx(lam[j], abs=1e-10)

    def test_rejects_bad_quadrature(self):
        with pytest.raises(ValueError):
            periodic_eigenvalues(BASE, 10, 1000)
        with pytest.raises(ValueError):
            periodic_eigenvalues(BASE, 10, 1025)

    def test_rejects_gaussian_base(self):
        with pytest.raises(ValueError):
            periodic_eigenvalues(BaseKernel.gaussian(1.0), 10)

    def test_periodized_gaussian_closed_form(self):
        sigma, period = 0.5, 2.0
        lam = periodized_gaussian_eigenvalues(sigma, period, 10).eigenvalues
        w0 = 2 * math.pi / period
        closed = math.sqrt(2 * math.pi) * sigma / period * np.exp(-sigma ** 2 * (np.arange(11) * w0) ** 2 / 2)
        np.testing.assert_allclose(lam, closed, atol=1e-10)


class TestAssumptionConstants:
    """N_ε, M_ε, Q_ε and the decay condition."""

    def test_default_constants(self):
        c = assumption_constants(BASE, 0.1, 2.0, 1.6)
        assert c.n_eps == pytest.approx(math.log2(336))
        assert c.N_eps == 17
        assert c.M_eps == pytest.approx(16 * math.sqrt(2))
        assert c.Q_eps == pytest.approx(math.sqrt(2))

    def test_smaller_eps_needs_more_terms(self):
        assert assumption_constants(BASE, 0.05, 2.0, 1.6).N_eps >= assumption_constants(BASE, 0.1, 2.0, 1.6).N_eps

    @pytest.mark.parametrize("kwargs", [{"eps": 0.0}, {"eps": 1.5}, {"c4": 1.0}, {"c6": 0.0}])
    def test_rejects_invalid(self, kwargs):
        args = {"eps": 0.1, "c4": 2.0, "c6": 1.6, **kwargs}
        with pytest.raises(ValueError):
            assumption_constants(BASE, **args)

    def test_condition_holds_in_the_tail(self):
        report = SpectrumReport(periodic_eigenvalues_bessel(BASE, 50), "periodic")
        check = eigen_condition_check(report, 2.0, 1.6, 50)
        assert all(row["passed"] for row in check["rows"] if row["j"] >= 4)
        assert not check["all_passed"]
        assert check["required_c6"] > 1.6

    def test_required_c6_makes_check_pass(self):
        report = SpectrumReport(periodic_eigenvalues_bessel(BASE, 50), "periodic")
        required = eigen_condition_check(report, 2.0, 1.6, 50)["required_c6"]
        assert eigen_condition_check(report, 2.0, required * (1 + 1e-12), 50)["all_passed"]

    def test_theoretical_sample_size(self):
        c = assumption_constants(BASE, 0.1, 2.0, 1.6)
        expected = 5.0 / (3.0 * 0.01) * 17 * 2.0 * math.log(2 * 17 / 0.05)
        assert theoretical_sample_size(c, 0.1, 0.05) == pytest.approx(expected)


class TestGaussianSpectrum:
    """Closed form under N(0, σ²) against Monte-Carlo."""

    def test_closed_form(self):
        lam = gaussian_eigenvalues_closed_form(1.0, 5).eigenvalues
        assert lam[0] == pytest.approx(0.618034, abs=1e-6)
        assert lam[1] / lam[0] == pytest.approx(0.381966, abs=1e-6)
        np.testing.assert_allclose(lam[1:] / lam[:-1], lam[1] / lam[0])

    def test_eigenfunctions_orthonormal(self):
        sigma = 0.7
        x = np.linspace(-12 * sigma, 12 * sigma, 40001)
        density = np.exp(-x ** 2 / (2 * sigma ** 2)) / (math.sqrt(2 * math.pi) * sigma)
        E = gaussian_eigenfunctions(sigma, 5, x)
        gram = integrate.trapezoid(E[:, :, None] * E[:, None, :] * density[:, None, None], x, axis=0)
        np.testing.assert_allclose(gram, np.eye(5), atol=1e-6)

    def test_empirical_matches_closed_form(self):
        lam = gaussian_eigenvalues_closed_form(1.0, 3).eigenvalues
        empirical = np.mean([gaussian_empirical_eigenvalues(1.0, 2000, 3, seed=s) for s in range(8)], axis=0)
        np.testing.assert_allclose(empirical, lam, rtol=0.05)

    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            gaussian_eigenvalues_closed_form(0.0, 3)
        with pytest.raises(ValueError):
            gaussian_eigenvalues_closed_form(1.0, 0)


class TestInverseKernelSpectrum:
    """Truncated moment matrix on the unit ball."""

    def test_ball_moments(self):
        assert ball_moment([0]) == pytest.approx(1.0)
        assert ball_moment([2]) == pytest.approx(1 / 3)
        assert ball_moment([2, 0]) == pytest.approx(1 / 4)
        assert ball_moment([1, 2]) == 0.0

    def test_multi_index_order(self):
        assert multi_indices(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

    def test_eigenvalues_decay(self):
        report = inverse_kernel_spectrum(2, 8)
        lam = report.sorted_eigenvalues
        assert report.params["n_features"] == 45
        assert lam[10] <= 0.125
        assert np.all(lam >= -1e-10)

    def test_one_dimension_trace(self):
        # tr M = Σ_k w_k² E[y^{2k}] with w_k² = 2^{−k−1}
        lam = inverse_kernel_spectrum(1, 6).eigenvalues
        expected = sum(2.0 ** (-k - 1) / (2 * k + 1) for k in range(7))
        assert lam.sum() == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("d,cap", [(0, 2), (5, 2), (2, 11)])
    def test_rejects_out_of_range(self, d, cap):
        with pytest.raises(ValueError):
            inverse_kernel_spectrum(d, cap)


class TestNystromCurve:
    """CoordNystrom error against ExactDiag."""

    def test_error_shrinks_with_witnesses(self):
        n_list = [4, 8, 16, 32, 64, 128, 256]
        curve = nystrom_error_curve(BaseKernel.gaussian(0.5), 4, n_list, trials=20, seed=0, threads=2)
        assert [row["n"] for row in curve] == n_list
        assert count_inversions([row["median_error"] for row in curve]) <= 1
        assert curve[-1]["relative_error"] < 0.02

    def test_rejects_inverse_kernel(self):
        with pytest.raises(ValueError):
            nystrom_error_curve("inverse", 2, [4])

    def test_count_inversions(self):
        assert count_inversions([3.0, 2.0, 2.5, 1.0]) == 1
        assert count_inversions([1.0, 1.0 + 1e-12]) == 0
