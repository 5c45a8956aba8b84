"""
Tests for losses, landmark features, witnesses and the constrained trainer.
"""

import math

import numpy as np
import pytest

from kernels import BaseKernel, KernelSpec, median_bandwidth
from lipbound import BRUTE_FORCE, COORD_NYSTROM, GREEDY, HOLISTIC_NYSTROM, LINF, RANDOM, Model
from process.dataset_process import Box, Dataset, gen_synthetic
from trainer import (CRAMMER_SINGER, HINGE, LandmarkMap, TrainConfig, greedy_witness, landmark_features,
                     loss_value, predict, train_binary, train_multiclass)


def two_point_data():
    return Dataset(np.array([[0.0], [1.0]]), np.array([-1, 1]))


def gaussian_spec(data, sigma=None):
    sigma = median_bandwidth(data.features) if sigma is None else sigma
    return KernelSpec.product(BaseKernel.gaussian(sigma), data.dim)


class TestLoss:
    """Hinge and Crammer-Singer."""

    def test_hinge_satisfied_margin(self):
        assert loss_value(HINGE, 2.0, 1) == 0.0

    @pytest.mark.parametrize("label", [-1, 1])
    def test_hinge_zero_score(self, label):
        assert loss_value(HINGE, 0.0, label) == 1.0

    def test_crammer_singer_equal_scores(self):
        assert loss_value(CRAMMER_SINGER, [0.4, 0.4, 0.4], 1) == 1.0

    def test_unknown_class(self):
        with pytest.raises(ValueError):
            loss_value(CRAMMER_SINGER, [0.0, 1.0], 2)

    def test_non_finite_scores(self):
        with pytest.raises(ValueError):
            loss_value(HINGE, float("nan"), 1)


class TestLandmarkMap:
    """Nyström feature map."""

    def test_single_landmark_feature(self):
        spec = KernelSpec.product(BaseKernel.gaussian(0.5), 2)
        w = np.array([0.3, 0.6])
        assert landmark_features(spec, w[None, :], w)[0] == pytest.approx(1.0)

    def test_reproduces_gram_on_landmarks(self):
        spec = KernelSpec.product(BaseKernel.gaussian(0.5), 2)
        Z = np.random.default_rng(0).uniform(0, 1, size=(5, 2))
        fmap = LandmarkMap(spec, Z)
        Phi = fmap.transform(Z)
        np.testing.assert_allclose(Phi @ Phi.T, spec.gram(Z, Z), atol=1e-8)

    def test_to_model_matches_linear_scores(self):
        spec = KernelSpec.product(BaseKernel.gaussian(0.4), 2)
        rng = np.random.default_rng(1)
        fmap = LandmarkMap(spec, rng.uniform(0, 1, size=(6, 2)))
        theta = rng.standard_normal(6)
        X = rng.uniform(0, 1, size=(4, 2))
        np.testing.assert_allclose(fmap.to_model(theta).decision(X), fmap.transform(X) @ theta, atol=1e-10)


class TestGreedyWitness:
    """Gradient-norm maximiser used as the next witness."""

    def test_bump_peak_radius(self):
        model = Model(KernelSpec.product(BaseKernel.gaussian(1.0), 2), np.zeros((1, 2)), np.array([1.0]))
        point = greedy_witness(model, Box.unit(2, -3, 3), seed=0)
        assert np.linalg.norm(point) == pytest.approx(1.0, abs=0.02)

    def test_zero_model_inside_domain(self):
        model = Model(KernelSpec.product(BaseKernel.gaussian(1.0), 2), np.zeros((1, 2)), np.array([0.0]))
        domain = Box.unit(2, -3, 3)
        assert domain.contains(greedy_witness(model, domain))

    def test_deterministic(self):
        model = Model(KernelSpec.product(BaseKernel.gaussian(0.5), 2), np.array([[0.2, 0.3], [0.7, 0.9]]),
                      np.array([1.0, -1.0]))
        a = greedy_witness(model, Box.unit(2), seed=3)
        b = greedy_witness(model, Box.unit(2), seed=3)
        np.testing.assert_array_equal(a, b)


class TestTrainConfig:
    """Validation."""

    @pytest.mark.parametrize("kwargs", [{"L": 0.0}, {"reg_weight": -1.0}, {"penalty_growth": 1.0},
                                        {"outer_iters": 0}, {"constraint_mode": "Exact"},
                                        {"witness_mode": "Sobol"}, {"loss": "Logistic"}])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_echo(self):
        echo = TrainConfig(L=2.0, domain=Box.unit(2)).to_dict()
        assert echo["L"] == 2.0
        assert echo["domain"] == {"low": [0.0, 0.0], "high": [1.0, 1.0]}


class TestTrainBinary:
    """Lipschitz-constrained binary training."""

    def test_generous_budget_separates_two_points(self):
        data = two_point_data()
        model, report = train_binary(data, gaussian_spec(data, 0.5), TrainConfig(L=100.0, outer_iters=3))
        assert np.array_equal(predict(model, data.features), data.labels)
        assert report.converged
        assert report.final["lipschitz"] <= 100.0 * 1.05

    def test_tiny_budget_flattens_model(self):
        data = two_point_data()
        model, report = train_binary(data, gaussian_spec(data, 0.5), TrainConfig(L=1e-6, outer_iters=3))
        hinge = np.mean(np.maximum(0.0, 1.0 - data.labels * model.decision(data.features)))
        assert hinge == pytest.approx(1.0, abs=0.05)
        assert report.final["constraint"] <= (1e-6) ** 2 * (1 + 1e-3)

    @pytest.mark.parametrize("mode", [HOLISTIC_NYSTROM, BRUTE_FORCE, COORD_NYSTROM])
    def test_constraint_value_respects_budget(self, mode):
        data = gen_synthetic("blobs", 20, 2, 2, seed=1)
        cfg = TrainConfig(L=0.5, constraint_mode=mode, outer_iters=4, inner_max_iter=100, seed=1)
        _, report = train_binary(data, gaussian_spec(data), cfg)
        for record in report.iterations:
            assert record["constraint"] <= 0.5 ** 2 * (1 + 1e-3)

    def test_deterministic(self):
        data = gen_synthetic("blobs", 15, 2, 2, seed=2)
        cfg = TrainConfig(L=0.5, outer_iters=3, inner_max_iter=80, seed=4)
        m1, r1 = train_binary(data, gaussian_spec(data), cfg)
        m2, r2 = train_binary(data, gaussian_spec(data), cfg)
        np.testing.assert_array_equal(m1.coeffs, m2.coeffs)
        assert r1.to_dict() == r2.to_dict()

    def test_rejects_multiclass_labels(self):
        data = gen_synthetic("blobs", 5, 3, 2, seed=0)
        with pytest.raises(ValueError):
            train_binary(data, gaussian_spec(data), TrainConfig())

    def test_coord_nystrom_needs_product_kernel(self):
        data = Dataset(np.array([[0.1, 0.2], [0.5, 0.3]]), np.array([-1, 1]))
        with pytest.raises(ValueError):
            train_binary(data, KernelSpec.inverse(2), TrainConfig(constraint_mode=COORD_NYSTROM))

    def test_inverse_kernel_trains(self):
        data = gen_synthetic("blobs", 10, 2, 2, seed=3)
        model, report = train_binary(data, KernelSpec.inverse(2), TrainConfig(L=5.0, outer_iters=2,
                                                                               inner_max_iter=60))
        assert report.iterations
        assert np.all(np.isfinite(model.decision(data.features)))


class TestWitnessModes:
    """Greedy and random witness growth on the same task."""

    def test_blobs_contract(self):
        data = gen_synthetic("blobs", 50, 2, 2, seed=0)
        cfg = TrainConfig(L=1.0, witness_mode=GREEDY, outer_iters=8, inner_max_iter=150, seed=0)
        _, report = train_binary(data, gaussian_spec(data), cfg)
        assert report.final["constraint"] <= 1.0 * (1 + 1e-3)
        if report.converged:
            assert report.final["lipschitz"] <= 1.05

    def test_greedy_needs_no_more_outer_iterations(self):
        rounds = {GREEDY: [], RANDOM: []}
        for seed in range(5):
            data = gen_synthetic("blobs", 20, 2, 2, seed=seed)
            for mode in rounds:
                cfg = TrainConfig(L=0.5, witness_mode=mode, outer_iters=6, inner_max_iter=80, seed=seed)
                _, report = train_binary(data, gaussian_spec(data), cfg)
                rounds[mode].append(len(report.iterations))
        assert np.median(rounds[GREEDY]) <= np.median(rounds[RANDOM])


class TestTrainMulticlass:
    """Crammer-Singer training with the multiclass bound."""

    def test_generous_budget_fits_blobs(self):
        data = gen_synthetic("blobs", 20, 3, 2, seed=0, cluster_std=0.03)
        cfg = TrainConfig(L=100.0, loss=CRAMMER_SINGER, outer_iters=2)
        models, report = train_multiclass(data, gaussian_spec(data), cfg)
        accuracy = np.mean(predict(models, data.features) == np.searchsorted(data.classes, data.labels))
        assert len(models) == 3
        assert accuracy >= 0.95

    def test_linf_budget(self):
        data = gen_synthetic("blobs", 8, 3, 2, seed=5)
        cfg = TrainConfig(L=0.5, loss=CRAMMER_SINGER, lip_norm=LINF, outer_iters=2, inner_max_iter=60)
        _, report = train_multiclass(data, gaussian_spec(data), cfg)
        for record in report.iterations:
            assert record["constraint"] <= 0.5 * (1 + 1e-3)

    def test_rejects_non_holistic(self):
        data = gen_synthetic("blobs", 5, 3, 2, seed=0)
        with pytest.raises(ValueError):
            train_multiclass(data, gaussian_spec(data), TrainConfig(constraint_mode=BRUTE_FORCE))


class TestPredict:
    """Decision rules."""

    def test_binary_ties_go_positive(self):
        model = Model(KernelSpec.product(BaseKernel.gaussian(1.0), 1), np.zeros((1, 1)), np.array([0.0]))
        assert predict(model, np.array([[0.3]]))[0] == 1

    def test_multiclass_argmax(self):
        spec = KernelSpec.product(BaseKernel.gaussian(0.2), 1)
        anchors = np.array([[0.0], [1.0]])
        models = [Model(spec, anchors, np.array([1.0, 0.0])), Model(spec, anchors, np.array([0.0, 1.0]))]
        np.testing.assert_array_equal(predict(models, np.array([[0.05], [0.95]])), [0, 1])
        assert math.isfinite(models[0].rkhs_norm())
