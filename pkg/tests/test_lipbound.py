"""
Tests for gradient Gram bounds, eigenvalue routines and Lipschitz estimates.
"""

import math

import numpy as np
import pytest

from kernels import BaseKernel, KernelSpec
from lipbound import (COORD_NYSTROM, EXACT_DIAG, HOLISTIC_NYSTROM, ConvergenceError, Model, WitnessSet,
                      build_gtg_product, build_gtilde_holistic, empirical_lipschitz, gtg_estimate, lambda_max,
                      linf_alternation, multiclass_l2_bound, multiclass_linf_bound, pseudo_inverse_norm,
                      rkhs_norm_bound, sampled_gradient_check)
from process.dataset_process import Box


def bump(sigma=1.0, d=2, center=None):
    spec = KernelSpec.product(BaseKernel.gaussian(sigma), d)
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    return Model(spec, center[None, :], np.array([1.0]))


def random_model(seed, n_anchors=10, d=2, sigma=0.5):
    rng = np.random.default_rng(seed)
    spec = KernelSpec.product(BaseKernel.gaussian(sigma), d)
    return Model(spec, rng.uniform(0, 1, size=(n_anchors, d)), rng.uniform(-2, 2, n_anchors))


def grid_witnesses(low, high, per_axis):
    g = np.linspace(low, high, per_axis)
    xx, yy = np.meshgrid(g, g)
    return WitnessSet(np.column_stack([xx.ravel(), yy.ravel()]))


class TestLambdaMax:
    """Power iteration."""

    def test_identity(self):
        assert lambda_max(np.eye(3)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert lambda_max(np.diag([1.0, 2.0, 3.0])) == pytest.approx(3.0, rel=1e-8)

    def test_two_by_two(self):
        assert lambda_max(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(3.0, rel=1e-10)

    def test_zero_matrix(self):
        assert lambda_max(np.zeros((4, 4))) == 0.0

    def test_start_orthogonal_to_top_eigenvector(self):
        M = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert lambda_max(M) == pytest.approx(2.0, rel=1e-8)

    def test_start_is_lower_eigenvector(self):
        assert lambda_max(np.array([[2.0, -1.0], [-1.0, 2.0]])) == pytest.approx(3.0, rel=1e-10)

    def test_ones_eigenvector_below_repeated_top(self):
        M = np.array([[3.0, 1.0, 1.0], [1.0, 3.0, 1.0], [1.0, 1.0, 3.0]]) - 4.0 * np.ones((3, 3)) / 3
        assert lambda_max(M) == pytest.approx(2.0, rel=1e-8)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_full_eigendecomposition(self, seed):
        A = np.random.default_rng(seed).standard_normal((20, 20))
        M = A @ A.T
        assert lambda_max(M) == pytest.approx(np.linalg.eigvalsh(M)[-1], rel=1e-8)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            lambda_max(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_iteration_cap_raises_with_best(self):
        with pytest.raises(ConvergenceError) as info:
            lambda_max(np.diag([1.0, 2.0, 3.0]), max_iter=1)
        assert 0.0 < info.value.best <= 3.0


class TestGradientGram:
    """ExactDiag, CoordNystrom and HolisticNystrom."""

    def test_exact_diag_single_anchor_is_identity(self):
        model = bump(1.0, 2, [0.5, 0.5])
        np.testing.assert_allclose(build_gtg_product(model, None, EXACT_DIAG), np.eye(2), atol=1e-15)
        assert gtg_estimate(model, None, EXACT_DIAG).value == pytest.approx(1.0)

    def test_coord_nystrom_dense_grid_approaches_from_below(self):
        model = bump(1.0, 2, [0.5, 0.5])
        g = np.linspace(0, 1, 64)
        P = build_gtg_product(model, WitnessSet(np.column_stack([g, g])), COORD_NYSTROM)
        assert np.all(np.diag(P) >= 1 - 1e-2)
        assert np.all(np.diag(P) <= 1 + 1e-9)

    def test_zero_coefficients(self):
        model = bump().with_coeffs([0.0])
        np.testing.assert_array_equal(build_gtg_product(model, None, EXACT_DIAG), np.zeros((2, 2)))
        np.testing.assert_array_equal(build_gtilde_holistic(model, grid_witnesses(-1, 1, 4)), np.zeros((16, 2)))

    def test_holistic_bump_between_sup_and_exact(self):
        value = gtg_estimate(bump(), grid_witnesses(-2, 2, 16), HOLISTIC_NYSTROM).value
        assert math.exp(-1) <= value <= 1 + 1e-9

    def test_holistic_monotone_in_nested_witnesses(self):
        model = random_model(0, sigma=0.3)
        points = np.random.default_rng(1).uniform(0, 1, size=(30, 2))
        small = gtg_estimate(model, WitnessSet(points[:10]), HOLISTIC_NYSTROM).value
        large = gtg_estimate(model, WitnessSet(points), HOLISTIC_NYSTROM).value
        assert small <= large + 1e-8

    def test_coord_nystrom_diagonal_grows_towards_exact(self):
        model = random_model(5, sigma=0.4)
        exact = np.diag(build_gtg_product(model, None, EXACT_DIAG))
        points = np.random.default_rng(6).uniform(0, 1, size=(32, 2))
        previous = np.full(2, -np.inf)
        for n in (4, 8, 16, 32):
            diag = np.diag(build_gtg_product(model, WitnessSet(points[:n]), COORD_NYSTROM))
            assert np.all(diag <= exact + 1e-9)
            assert np.all(diag >= previous - 1e-8 * exact.max())
            previous = diag

    @pytest.mark.parametrize("seed", range(3))
    def test_holistic_close_to_exact_on_dense_grid(self, seed):
        model = random_model(seed, sigma=0.5)
        exact = gtg_estimate(model, None, EXACT_DIAG).value
        holistic = gtg_estimate(model, grid_witnesses(0, 1, 16), HOLISTIC_NYSTROM).value
        assert abs(holistic - exact) / exact < 0.05

    def test_coord_nystrom_requires_product_kernel(self):
        model = Model(KernelSpec.inverse(2), np.array([[0.1, 0.2]]), np.array([1.0]))
        with pytest.raises(ValueError):
            build_gtg_product(model, grid_witnesses(0, 0.5, 3), COORD_NYSTROM)

    def test_empty_witnesses(self):
        with pytest.raises(ValueError):
            build_gtilde_holistic(bump(), WitnessSet(np.empty((0, 2))))


class TestRkhsBound:
    """‖f‖_H times the growth slope."""

    def test_unit_bandwidth(self):
        assert rkhs_norm_bound(bump(1.0)).value == pytest.approx(1.0)

    def test_half_bandwidth(self):
        assert rkhs_norm_bound(bump(0.5)).value == pytest.approx(2.0)

    def test_zero_model(self):
        assert rkhs_norm_bound(bump().with_coeffs([0.0])).value == 0.0


class TestEigenvalueVersusNormBound:
    """λ_max(GᵀG) against the RKHS norm times the growth slope."""

    @staticmethod
    def spread_matrix(model):
        beta, X = model.weights, model.anchors
        K = model.kernel.gram(X, X)
        diff = X[:, None, :] - X[None, :, :]
        return np.einsum("a,b,ab,abi,abj->ij", beta, beta, K, diff, diff)

    @pytest.mark.parametrize("seed", range(3))
    def test_exact_gram_splits_into_norm_and_spread(self, seed):
        model = random_model(seed, sigma=0.5)
        s2 = 0.25
        expected = model.rkhs_norm() ** 2 / s2 * np.eye(2) - self.spread_matrix(model) / s2 ** 2
        np.testing.assert_allclose(build_gtg_product(model, None, EXACT_DIAG), expected, rtol=1e-9, atol=1e-12)

    def test_eigenvalue_bound_is_tighter_for_nonnegative_models(self):
        ratios = []
        for seed in range(50):
            rng = np.random.default_rng(seed)
            spec = KernelSpec.product(BaseKernel.gaussian(0.5), 2)
            model = Model(spec, rng.uniform(0, 1, size=(10, 2)), rng.uniform(0, 2, 10))
            ratios.append(gtg_estimate(model, None, EXACT_DIAG).value / rkhs_norm_bound(model).value ** 2)
        assert max(ratios) <= 1 + 1e-9
        assert np.median(ratios) < 1


class TestEmpiricalLipschitz:
    """Multi-start gradient norm ascent."""

    def test_zero_model(self):
        assert empirical_lipschitz(bump().with_coeffs([0.0]), Box.unit(2, -3, 3)).value == 0.0

    def test_bump_reaches_radius_one_peak(self):
        est = empirical_lipschitz(bump(), Box.unit(2, -3, 3), restarts=10, seed=0)
        assert est.value >= 0.99 * math.exp(-0.5)
        assert est.value <= math.exp(-0.5) + 1e-9

    def test_deterministic(self):
        model = random_model(4)
        a = empirical_lipschitz(model, Box.unit(2), seed=7)
        b = empirical_lipschitz(model, Box.unit(2), seed=7)
        assert a.value == b.value
        np.testing.assert_array_equal(a.argmax, b.argmax)

    @pytest.mark.parametrize("seed", range(50))
    def test_sandwich_with_exact_gram(self, seed):
        model = random_model(seed)
        empirical = empirical_lipschitz(model, Box.unit(2), seed=seed).value
        exact = gtg_estimate(model, None, EXACT_DIAG).value
        assert empirical ** 2 <= exact + 1e-6

    def test_inverse_kernel_stays_in_ball(self):
        rng = np.random.default_rng(0)
        model = Model(KernelSpec.inverse(2), rng.uniform(-0.5, 0.5, (5, 2)), rng.uniform(-1, 1, 5))
        est = empirical_lipschitz(model, Box.unit(2, -1, 1), restarts=4)
        assert np.linalg.norm(est.argmax) <= 1 + 1e-9

    def test_inverse_gradient_outside_ball_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        model = Model(KernelSpec.inverse(2), rng.uniform(-0.5, 0.5, (5, 2)), rng.uniform(-1, 1, 5))
        x, h = np.array([1.2, 0.5]), 1e-6
        fd = np.array([(model.decision(x + e)[0] - model.decision(x - e)[0]) / (2 * h)
                       for e in np.eye(2) * h])
        np.testing.assert_allclose(model.gradient(x), fd, atol=1e-7)


class TestMulticlass:
    """ℓ2 and ℓ∞ alternation bounds."""

    def setup_method(self):
        self.witnesses = WitnessSet(np.random.default_rng(0).uniform(0, 1, size=(12, 2)))

    def test_l2_single_nonzero_class(self):
        model = random_model(1)
        zero = model.with_coeffs(np.zeros(model.n_anchors))
        expected = gtg_estimate(model, self.witnesses, HOLISTIC_NYSTROM).value
        value = multiclass_l2_bound([model, zero], self.witnesses).value
        assert value == pytest.approx(expected, rel=1e-5)

    def test_l2_two_identical_classes(self):
        model = random_model(2)
        expected = gtg_estimate(model, self.witnesses, HOLISTIC_NYSTROM).value
        assert multiclass_l2_bound([model, model], self.witnesses).value == pytest.approx(2 * expected, rel=1e-5)

    def test_l2_all_zero(self):
        zero = random_model(3).with_coeffs(np.zeros(10))
        assert multiclass_l2_bound([zero, zero, zero], self.witnesses).value == 0.0

    def test_linf_single_column(self):
        g = np.array([[3.0], [4.0]])
        assert linf_alternation(g)[0] == pytest.approx(5.0)

    def test_linf_identity(self):
        assert linf_alternation(np.eye(2))[0] == pytest.approx(math.sqrt(2))

    def test_linf_zero_models(self):
        zero = random_model(3).with_coeffs(np.zeros(10))
        assert multiclass_linf_bound([zero, zero], self.witnesses).value == 0.0

    def test_mismatched_kernels(self):
        other = Model(KernelSpec.product(BaseKernel.gaussian(2.0), 2), np.zeros((1, 2)), np.ones(1))
        with pytest.raises(ValueError):
            multiclass_l2_bound([random_model(0), other], self.witnesses)


class TestSampledGradientCheck:
    """Random probing misses large gradients that the pseudo-inverse recovers."""

    def test_sampling_never_exceeds_true_norm(self):
        v = np.full(8, 1.5 / math.sqrt(8))
        assert sampled_gradient_check(v, 200, seed=0) <= np.dot(v, v) + 1e-12

    def test_pseudo_inverse_recovers_norm(self):
        v = np.array([3.0, 4.0])
        assert pseudo_inverse_norm(v, 5, seed=0) == pytest.approx(5.0, rel=1e-8)
