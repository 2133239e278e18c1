"""Inverse-assignment weights and the lasso-logistic propensity model."""

import numpy as np
import pytest
from scipy.special import expit

from odpscreen import (ConstantPropensity, LassoPropensity, SuppliedPropensity,
                       compute_weights, estimate_propensity_lasso,
                       resolve_propensity)
from odpscreen.data import BinaryOutcome, Dataset
from odpscreen.propensity import (_standardize, lasso_logistic_path,
                                  penalty_grid)

from conftest import make_binary_dataset


class TestComputeWeights:
    def test_hand_example(self):
        # raw inverse weights (1.25, 2, 4); dividing by their mean 7.25/3
        # gives weights summing to n
        t = np.array([1.0, 1.0, -1.0])
        pi = np.array([0.8, 0.5, 0.75])
        ws = compute_weights(t, pi)
        np.testing.assert_allclose(
            ws.weights, [0.5172413793103449, 0.8275862068965517, 1.6551724137931034]
        )
        assert ws.scale == pytest.approx(7.25 / 3.0)

    def test_weights_sum_to_n(self):
        rng = np.random.default_rng(0)
        n = 500
        t = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        pi = rng.uniform(0.05, 0.95, n)
        ws = compute_weights(t, pi)
        assert ws.weights.sum() == pytest.approx(n, rel=1e-12)
        assert (ws.weights > 0.0).all()
        assert ws.n == n

    def test_constant_half_gives_equal_weights(self):
        t = np.array([1.0, -1.0, 1.0, -1.0])
        ws = compute_weights(t, np.full(4, 0.5))
        np.testing.assert_allclose(ws.weights, 1.0)

    def test_bad_probability_rejected(self):
        t = np.array([1.0, -1.0])
        with pytest.raises(ValueError):
            compute_weights(t, np.array([0.5, 1.0]))
        with pytest.raises(ValueError):
            compute_weights(t, np.array([0.0, 0.5]))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            compute_weights(np.array([1.0, -1.0]), np.array([0.5]))


class TestSpecs:
    def test_constant_validated(self):
        with pytest.raises(ValueError):
            ConstantPropensity(0.0)
        with pytest.raises(ValueError):
            ConstantPropensity(1.0)
        assert ConstantPropensity(0.5).value == 0.5

    def test_supplied_validated(self):
        with pytest.raises(ValueError):
            SuppliedPropensity(np.array([0.5, 1.0]))
        spec = SuppliedPropensity(np.array([0.4, 0.6]))
        np.testing.assert_array_equal(spec.probabilities, [0.4, 0.6])

    def test_lasso_validated(self):
        with pytest.raises(ValueError):
            LassoPropensity(folds=1)
        with pytest.raises(ValueError):
            LassoPropensity(grid_size=1)

    def test_resolve_constant_and_supplied(self, binary_dataset):
        n = binary_dataset.n_subjects
        got = resolve_propensity(binary_dataset, ConstantPropensity(0.3))
        np.testing.assert_allclose(got, 0.3)
        supplied = np.linspace(0.2, 0.8, n)
        got = resolve_propensity(binary_dataset, SuppliedPropensity(supplied))
        np.testing.assert_array_equal(got, supplied)
        with pytest.raises(ValueError, match="length"):
            resolve_propensity(binary_dataset, SuppliedPropensity(np.array([0.5])))


def logistic_dataset(n=300, p=12, seed=0, strength=1.2):
    """Treatment driven by the first two features; the rest are noise."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    eta = strength * (x[:, 0] - x[:, 1])
    t = np.where(rng.random(n) < expit(eta), 1.0, -1.0)
    t[:2] = (1.0, -1.0)
    y01 = (t + 1.0) / 2.0
    y = rng.integers(0, 2, n).astype(np.float64)
    y[:2] = (0.0, 1.0)
    ds = Dataset(BinaryOutcome(y), t, x, np.empty((n, 0)))
    return ds, x, y01


class TestLassoSolver:
    def test_all_zero_at_grid_top(self):
        _, x, y01 = logistic_dataset()
        grid = penalty_grid(x, y01, grid_size=10)
        fits = lasso_logistic_path(x, y01, grid[:1])
        assert fits[0].n_active == 0
        # intercept solves the null model: expit(b0) = mean(y)
        assert expit(fits[0].intercept) == pytest.approx(y01.mean(), abs=1e-8)

    def test_kkt_conditions_hold_along_path(self):
        _, x, y01 = logistic_dataset()
        grid = penalty_grid(x, y01, grid_size=8)
        xs, _, _ = _standardize(x)
        n = len(y01)
        for fit in lasso_logistic_path(x, y01, grid):
            prob = expit(fit.intercept + xs @ fit.coef)
            score = xs.T @ (y01 - prob) / n
            active = fit.coef != 0.0
            # stationarity at nonzero coordinates, subgradient bound at zeros
            np.testing.assert_allclose(
                score[active], fit.penalty * np.sign(fit.coef[active]), atol=1e-6
            )
            assert np.all(np.abs(score[~active]) <= fit.penalty + 1e-6)
            # intercept is unpenalized: its score must vanish
            assert np.mean(y01 - prob) == pytest.approx(0.0, abs=1e-8)

    def test_signal_coefficients_survive(self):
        _, x, y01 = logistic_dataset(seed=3)
        grid = penalty_grid(x, y01, grid_size=30)
        fit = lasso_logistic_path(x, y01, grid)[-1]
        assert fit.coef[0] > 0.2
        assert fit.coef[1] < -0.2


class TestEstimatePropensity:
    def test_probabilities_clipped_and_aligned(self):
        ds, _, _ = logistic_dataset(seed=1)
        prob = estimate_propensity_lasso(ds, LassoPropensity(folds=5))
        assert prob.shape == (ds.n_subjects,)
        assert (prob >= 0.01).all() and (prob <= 0.99).all()

    def test_recovers_direction_of_signal(self):
        ds, x, _ = logistic_dataset(seed=2, n=400)
        prob = estimate_propensity_lasso(ds, LassoPropensity(folds=5))
        # higher x0 - x1 means higher treatment probability
        index = x[:, 0] - x[:, 1]
        hi = prob[index > np.quantile(index, 0.8)].mean()
        lo = prob[index < np.quantile(index, 0.2)].mean()
        assert hi > lo + 0.2

    def test_deterministic_given_seed(self):
        ds, _, _ = logistic_dataset(seed=4)
        a = estimate_propensity_lasso(ds, LassoPropensity(folds=4), seed=7)
        b = estimate_propensity_lasso(ds, LassoPropensity(folds=4), seed=7)
        np.testing.assert_array_equal(a, b)

    def test_too_few_subjects_rejected(self):
        ds = make_binary_dataset(n=12)
        with pytest.raises(ValueError, match="fold"):
            estimate_propensity_lasso(ds, LassoPropensity(folds=10))
