"""Data-generating process moments and the benchmark driver."""

import numpy as np
import pytest
from scipy.special import expit

from odpscreen import SimConfig, generate_replicate, run_benchmark
from odpscreen.simulation import (CENSOR_RANGE, NOISE_SD, gen_confounders,
                                  gen_covariates, gen_effects, gen_outcome,
                                  gen_treatment, write_benchmark, write_truth)


class TestCovariates:
    def test_unit_variances_and_lag_one_correlation(self):
        rng = np.random.default_rng(0)
        n = 200_000
        x = gen_covariates(n, 12, rng)
        mcse = 4.0 / np.sqrt(n)
        np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=4 * mcse)
        np.testing.assert_allclose(x.var(axis=0), 1.0, atol=8 * mcse)
        for j in range(1, 12):
            corr = np.mean(x[:, j] * x[:, j - 1])
            assert corr == pytest.approx(0.1, abs=4 * mcse)

    def test_correlation_decays_geometrically(self):
        rng = np.random.default_rng(1)
        x = gen_covariates(400_000, 6, rng)
        lag2 = np.mean(x[:, 2] * x[:, 0])
        assert lag2 == pytest.approx(0.01, abs=0.01)


class TestConfounders:
    def test_conditional_mean_and_covariance(self):
        rng = np.random.default_rng(2)
        n = 200_000
        x = gen_covariates(n, 10, rng)
        z = gen_confounders(x, rng)
        basis = np.column_stack([np.ones(n), x[:, 0], x[:, 9]])
        coef, *_ = np.linalg.lstsq(basis, z, rcond=None)
        # both confounders share the mean 0.1 X_1 - 0.1 X_10
        np.testing.assert_allclose(coef[1], [0.1, 0.1], atol=0.02)
        np.testing.assert_allclose(coef[2], [-0.1, -0.1], atol=0.02)
        resid = z - basis @ coef
        cov = resid.T @ resid / n
        assert cov[0, 0] == pytest.approx(1.0, abs=0.02)
        assert cov[1, 1] == pytest.approx(1.0, abs=0.02)
        assert cov[0, 1] == pytest.approx(0.2, abs=0.02)

    def test_needs_ten_covariates(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError, match="p >= 10"):
            gen_confounders(rng.standard_normal((50, 9)), rng)


class TestTreatment:
    def test_probability_formula_and_balance(self):
        rng = np.random.default_rng(4)
        n = 100_000
        x = gen_covariates(n, 10, rng)
        z = gen_confounders(x, rng)
        t, prob = gen_treatment(x, z, rng)
        np.testing.assert_array_equal(
            prob, expit(0.2 * x[:, 0] + 0.1 * x[:, 1] + 0.1 * z[:, 0])
        )
        assert np.isin(t, (-1.0, 1.0)).all()
        assert (t == 1.0).mean() == pytest.approx(0.5, abs=0.01)
        # assignment is genuinely confounded by x1
        assert np.corrcoef(t, x[:, 0])[0, 1] > 0.05


class TestEffects:
    def test_mixture_composition(self):
        rng = np.random.default_rng(5)
        p = 200_000
        truth = gen_effects(p, 0.8, rng)
        assert truth.null_mask.mean() == pytest.approx(0.8, abs=0.005)
        np.testing.assert_array_equal(truth.null_mask, truth.beta == 0.0)
        nonnull = truth.beta[~truth.null_mask]
        # 30/70 split between bumps at 0.2 and -0.5, each with sd 0.1
        upper = nonnull[nonnull > -0.15]
        lower = nonnull[nonnull <= -0.15]
        assert upper.size / nonnull.size == pytest.approx(0.3, abs=0.01)
        assert upper.mean() == pytest.approx(0.2, abs=0.005)
        assert lower.mean() == pytest.approx(-0.5, abs=0.005)
        assert upper.std() == pytest.approx(0.1, abs=0.005)
        assert nonnull.mean() == pytest.approx(-0.29, abs=0.01)

    def test_null_probability_validated(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError):
            gen_effects(100, 1.0, rng)


class TestOutcome:
    def test_binary_threshold(self):
        cfg = SimConfig(n=50_000, p=20, outcome="binary", seed=3)
        ds, truth, _ = generate_replicate(cfg, 0)
        y = ds.outcome.y
        assert set(np.unique(y)) <= {0.0, 1.0}
        assert y.mean() == pytest.approx(0.5, abs=0.02)
        # positive outcomes sit at higher latent index on average
        m = truth.gamma.shape[0]
        index = (ds.x[:, :m] @ truth.gamma + (ds.x[:, :m] ** 2) @ truth.delta
                 + ds.treatment * (ds.x @ truth.beta)
                 + ds.treatment * (ds.z @ truth.xi))
        assert index[y == 1.0].mean() > index[y == 0.0].mean() + 0.1

    def test_binary_noise_scale(self):
        # with a degenerate index of 0 the positive rate pins at 1/2;
        # the latent noise sd is checked through the index coefficient
        rng = np.random.default_rng(7)
        n = 200_000
        flat = np.zeros((n, 10))
        truth = gen_effects(10, 0.9, np.random.default_rng(8))
        out = gen_outcome(flat, np.zeros((n, 2)), np.ones(n), truth,
                          "binary", rng)
        assert out.y.mean() == pytest.approx(0.5, abs=0.005)
        assert NOISE_SD == 5.0

    def test_survival_censoring_fraction_in_band(self):
        cfg = SimConfig(n=4000, p=500, outcome="survival", seed=9)
        ds, _, _ = generate_replicate(cfg, 0)
        frac = 1.0 - ds.outcome.event.mean()
        assert 0.2 <= frac <= 0.4
        censored = ds.outcome.event == 0.0
        lo, hi = CENSOR_RANGE
        assert (ds.outcome.time[censored] >= lo).all()
        assert (ds.outcome.time[censored] <= hi).all()


class TestReplicates:
    def test_bit_identical_reproduction(self):
        cfg = SimConfig(n=300, p=40, outcome="binary", seed=11)
        a_ds, a_truth, a_prob = generate_replicate(cfg, 4)
        b_ds, b_truth, b_prob = generate_replicate(cfg, 4)
        np.testing.assert_array_equal(a_ds.x, b_ds.x)
        np.testing.assert_array_equal(a_ds.outcome.y, b_ds.outcome.y)
        np.testing.assert_array_equal(a_truth.beta, b_truth.beta)
        np.testing.assert_array_equal(a_prob, b_prob)

    def test_replicates_differ(self):
        cfg = SimConfig(n=300, p=40, outcome="binary", seed=11)
        a_ds, _, _ = generate_replicate(cfg, 0)
        b_ds, _, _ = generate_replicate(cfg, 1)
        assert not np.array_equal(a_ds.x, b_ds.x)

    def test_seed_enters_stream(self):
        a_ds, _, _ = generate_replicate(SimConfig(n=50, p=20, seed=1), 0)
        b_ds, _, _ = generate_replicate(SimConfig(n=50, p=20, seed=2), 0)
        assert not np.array_equal(a_ds.x, b_ds.x)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(outcome="counts")
        with pytest.raises(ValueError):
            SimConfig(pi_null=0.0)
        with pytest.raises(ValueError):
            SimConfig(p=5)


class TestBenchmark:
    def test_small_binary_benchmark(self, tmp_path):
        cfg = SimConfig(n=200, p=60, outcome="binary", pi_null=0.7,
                        replications=2, seed=13, fdr_levels=(0.10, 0.20),
                        plugin_knots=25, normal_knots=(25,))
        result = run_benchmark(cfg)
        assert result.methods == ("odp-p", "odp-n", "t", "s")
        assert result.levels == (0.10, 0.20)
        assert result.tp.shape == (4, 2, 2)
        assert result.failed == ()
        assert (result.tp >= 0).all() and (result.fp >= 0).all()
        for method in result.methods:
            assert result.avg_tp(method).shape == (2,)
            fdp = result.avg_fdp(method)
            assert ((0.0 <= fdp) & (fdp <= 1.0)).all()

        path = tmp_path / "bench.tsv"
        write_benchmark(result, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "method\tfdr_level\tavg_tp\tavg_fp"
        assert len(lines) == 1 + 4 * 2
        assert lines[1].startswith("odp-p\t0.10\t")

    def test_multiple_normal_grids_are_labeled(self):
        cfg = SimConfig(n=150, p=40, outcome="binary", pi_null=0.7,
                        replications=1, seed=17, fdr_levels=(0.20,),
                        plugin_knots=15, normal_knots=(10, 20))
        result = run_benchmark(cfg)
        assert result.methods == ("odp-p", "odp-n-10", "odp-n-20", "t", "s")

    def test_truth_writer(self, tmp_path):
        _, truth, _ = generate_replicate(SimConfig(n=50, p=15, seed=19), 0)
        path = tmp_path / "truth.tsv"
        write_truth(truth, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "k\tbeta\tnull"
        assert len(lines) == 16
        cols = lines[1].split("\t")
        assert cols[2] in ("0", "1")
