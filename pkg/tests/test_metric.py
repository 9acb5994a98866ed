"""Distance definitions: hand-computed values, symmetry, and ranges."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from edgemetric.features import FeatureConfig
from edgemetric.metric import (
    ChiSquareModel,
    MetricModel,
    chi_square,
    combine_chi_square,
    combined_distance,
    kernel_distance,
    logistic_transform,
    mean_scale_distance,
    metric_distance,
)

from conftest import random_histogram


class TestChiSquare:
    def test_identical_histograms_are_zero(self):
        u = np.array([0.2, 0.3, 0.5])
        assert chi_square(u, u) == 0.0

    def test_disjoint_support_saturates_at_one(self):
        assert chi_square([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)

    def test_hand_computed_value(self):
        # 0.5 * (0.0625/0.75 + 0.0625/1.25) = 1/15
        d = chi_square([0.5, 0.5], [0.25, 0.75])
        assert_allclose(d, 0.0666666666, atol=1e-9)

    def test_empty_bins_contribute_zero(self):
        assert chi_square([0.5, 0.5, 0.0], [0.5, 0.5, 0.0]) == 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            chi_square([1.0], [0.5, 0.5])

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            chi_square([-0.1, 1.1], [0.5, 0.5])

    def test_symmetry_range_and_identity(self, rng):
        """chi^2 is symmetric, in [0, 1], and zero iff the inputs agree."""
        for _ in range(300):
            m = int(rng.integers(2, 40))
            u = random_histogram(rng, m, concentrated=bool(rng.integers(2)))
            v = random_histogram(rng, m, concentrated=bool(rng.integers(2)))
            d_uv = chi_square(u, v)
            assert d_uv == pytest.approx(chi_square(v, u), abs=0)
            assert 0.0 <= d_uv <= 1.0 + 1e-12
            if np.allclose(u, v, atol=1e-15):
                assert d_uv < 1e-12
            assert chi_square(u, u) < 1e-12


class TestCombineChiSquare:
    def test_zero_grid(self):
        model = ChiSquareModel.equal()
        assert combine_chi_square(np.zeros((4, 4)), model) == 0.0

    def test_equal_weights_normalize(self):
        model = ChiSquareModel.equal()
        assert combine_chi_square(np.ones((4, 4)), model) == pytest.approx(1.0)

    def test_single_entry(self):
        model = ChiSquareModel.equal()
        grid = np.zeros((4, 4))
        grid[2, 1] = 0.8
        assert combine_chi_square(grid, model) == pytest.approx(0.05)

    def test_equal_mode_requires_identical_weights(self):
        with pytest.raises(ValueError):
            ChiSquareModel(weights=np.eye(4), mode="equal")


class TestLogisticTransform:
    def test_zero_parameters_give_half(self):
        u = np.array([0.3, 0.7])
        out = logistic_transform(u, np.zeros(3), np.zeros((3, 2)))
        assert_allclose(out, 0.5)

    def test_saturation_does_not_overflow(self):
        out = logistic_transform(np.zeros(2), np.array([40.0, -40.0]), np.zeros((2, 2)))
        assert out[0] == pytest.approx(1.0, abs=1e-15)
        assert out[1] == pytest.approx(0.0, abs=1e-15)
        # extreme pre-activations stay finite
        out = logistic_transform(np.ones(2), np.array([1e4]), np.full((1, 2), 1e4))
        assert np.all(np.isfinite(out))

    def test_scalar_evaluation(self):
        out = logistic_transform(
            np.array([0.5, 0.5]), np.array([1.0]), np.array([[1.0, 1.0]])
        )
        assert_allclose(out[0], 1.0 / (1.0 + math.exp(-2.0)), rtol=1e-12)
        assert out[0] == pytest.approx(0.880797, abs=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            logistic_transform(np.zeros(3), np.zeros(2), np.zeros((2, 4)))


def _model(kernel="rbf", sigma=0.2, n_scales=1, n_out=4, m=None, rng=None):
    fc = FeatureConfig()
    m = m or fc.total_bins
    if rng is None:
        alpha = np.zeros((n_scales, n_out))
        beta = np.zeros((n_scales, n_out, m))
    else:
        alpha = rng.uniform(-1, 1, (n_scales, n_out))
        beta = rng.uniform(-1, 1, (n_scales, n_out, m))
    fc_arg = fc if m == fc.total_bins else None
    return MetricModel(alpha=alpha, beta=beta, kernel=kernel, sigma=sigma,
                       feature_config=fc_arg)


class TestKernelDistance:
    def test_coincident_inputs_both_kernels(self):
        t = np.array([0.2, 0.8, 0.5, 0.1])
        for kernel in ("rbf", "linear"):
            assert kernel_distance(t, t, _model(kernel)) == 0.0

    def test_rbf_closed_form(self):
        # squared distance exactly 2 sigma^2 -> 1 - 1/e
        sigma = 0.2
        tu = np.array([0.0, 0.0])
        tv = np.array([np.sqrt(2.0) * sigma, 0.0])
        d = kernel_distance(tu, tv, _model("rbf", sigma, n_out=2, m=5))
        assert d == pytest.approx(1.0 - math.exp(-1.0), rel=1e-12)
        assert d == pytest.approx(0.632121, abs=1e-6)

    def test_rbf_monotone_and_bounded(self, rng):
        sigma = 0.2
        model = _model("rbf", sigma, n_out=4, m=5)
        prev = -1.0
        for scale in np.linspace(0.0, 8.0, 30):
            tu = np.zeros(4)
            tv = np.full(4, scale / 4.0)
            d = kernel_distance(tu, tv, model)
            assert 0.0 <= d < 1.0
            assert d >= prev
            prev = d

    def test_sigma_validation(self):
        with pytest.raises(ValueError):
            _model("rbf", sigma=0.0)

    def test_linear_is_mean_absolute_difference(self):
        tu = np.array([0.1, 0.9])
        tv = np.array([0.5, 0.5])
        d = kernel_distance(tu, tv, _model("linear", n_out=2, m=5))
        assert d == pytest.approx(0.4)


class TestMetricDistance:
    def test_identical_inputs(self, rng):
        model = _model("rbf", rng=rng)
        u = random_histogram(rng, model.n_in)
        assert metric_distance(u, u, model, 0) == 0.0

    def test_symmetry(self, rng):
        model = _model("rbf", rng=rng)
        for _ in range(100):
            u = random_histogram(rng, model.n_in)
            v = random_histogram(rng, model.n_in)
            assert metric_distance(u, v, model, 0) == pytest.approx(
                metric_distance(v, u, model, 0), abs=1e-15
            )

    def test_against_straight_line_reimplementation(self, rng):
        """Direct scalar transcription of the transform + RBF formulas."""
        for _ in range(20):
            n_out, m = 5, 11
            alpha = rng.uniform(-1, 1, (1, n_out))
            beta = rng.uniform(-1, 1, (1, n_out, m))
            sigma = float(rng.uniform(0.1, 1.0))
            model = MetricModel(alpha=alpha, beta=beta, kernel="rbf", sigma=sigma,
                                feature_config=None)
            u = rng.random(m)
            v = rng.random(m)
            got = metric_distance(u, v, model, 0)
            sq = 0.0
            for n in range(n_out):
                au = alpha[0, n] + sum(beta[0, n, j] * u[j] for j in range(m))
                av = alpha[0, n] + sum(beta[0, n, j] * v[j] for j in range(m))
                tu = 1.0 / (1.0 + math.exp(-au))
                tv = 1.0 / (1.0 + math.exp(-av))
                sq += (tu - tv) ** 2
            want = 1.0 - math.exp(-sq / (2.0 * sigma**2))
            assert got == pytest.approx(want, abs=1e-12)


class TestMeanScaleDistance:
    def test_constant_values(self):
        assert mean_scale_distance([0.3, 0.3, 0.3]) == pytest.approx(0.3)

    def test_single_nonzero(self):
        assert mean_scale_distance([0.0, 0.0, 0.0, 1.0]) == pytest.approx(0.25)

    def test_arithmetic(self):
        assert mean_scale_distance([0.2, 0.4, 0.6, 0.8]) == pytest.approx(0.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_scale_distance([])

    def test_combined_stays_in_unit_interval(self, rng):
        model = _model("rbf", n_scales=4, rng=rng)
        u = np.stack([random_histogram(rng, model.n_in) for _ in range(4)])
        v = np.stack([random_histogram(rng, model.n_in) for _ in range(4)])
        d = combined_distance(u, v, model)
        assert 0.0 <= d < 1.0
