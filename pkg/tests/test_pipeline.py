"""End-to-end screening pipeline invariants."""

import numpy as np
import pytest

from odpscreen import (ConstantPropensity, Dataset, ScreenOptions, run_qvalue,
                       run_screen)

from conftest import make_binary_dataset, make_survival_dataset


def small_options(**kw):
    base = dict(knots=20, fdr_levels=(0.05, 0.10, 0.15, 0.20))
    base.update(kw)
    return ScreenOptions(**base)


class TestRunScreen:
    def test_report_rows_align_with_input_columns(self):
        ds = make_binary_dataset(n=150, p=12, seed=30, beta=[1.0] + [0.0] * 11)
        run = run_screen(ds, small_options())
        r = run.result
        assert r.names == ds.biomarker_names
        for arr in (r.beta_hat, r.se, r.ods, r.post_null, r.t_stat, r.s_stat,
                    r.p_value, r.q_value):
            assert arr.shape == (12,)
        assert run.kind == "binomial"
        assert run.prior is not None and run.grid is not None
        np.testing.assert_array_equal(run.propensity, 0.5)

    def test_survival_default_loss(self):
        ds = make_survival_dataset(n=120, p=8, seed=31)
        run = run_screen(ds, small_options())
        assert run.kind == "cox"

    def test_posterior_identity_holds_in_results(self):
        ds = make_binary_dataset(n=150, p=12, seed=32)
        run = run_screen(ds, small_options())
        r = run.result
        pi = run.prior.pi
        valid = ~r.flagged
        odds = r.ods[valid] * (1.0 - pi) / pi
        np.testing.assert_allclose(
            odds, r.post_nonnull[valid] / r.post_null[valid], rtol=1e-8
        )

    def test_flagged_biomarker_gets_sentinels_and_stays_unselected(self):
        ds = make_binary_dataset(n=150, p=10, seed=33)
        x = ds.x.copy()
        x[:, 4] = 2.0
        ds = Dataset(ds.outcome, ds.treatment, x, ds.z)
        run = run_screen(ds, small_options())
        r = run.result
        assert r.flagged[4]
        assert r.ods[4] == 1.0
        assert r.post_null[4] == pytest.approx(run.prior.pi)
        assert r.t_stat[4] == 0.0
        for sel in r.selections:
            assert 4 not in sel.indices

    def test_selection_masks_match_selection_sets(self):
        ds = make_binary_dataset(n=200, p=15, seed=34,
                                 beta=[1.2, -1.0] + [0.0] * 13)
        run = run_screen(ds, small_options())
        r = run.result
        for i, sel in enumerate(r.selections):
            mask = r.selected_mask(i)
            np.testing.assert_array_equal(np.flatnonzero(mask),
                                          np.sort(sel.indices))

    def test_selections_nest(self):
        ds = make_binary_dataset(n=200, p=15, seed=35,
                                 beta=[1.2, -1.0] + [0.0] * 13)
        run = run_screen(ds, small_options())
        prev: set = set()
        for sel in run.result.selections:
            members = set(sel.indices.tolist())
            assert prev <= members
            prev = members

    def test_plugin_and_normal_both_run(self):
        ds = make_binary_dataset(n=150, p=10, seed=36)
        plug = run_screen(ds, small_options(method="plugin"))
        norm = run_screen(ds, small_options(method="normal"))
        assert np.isfinite(plug.result.log_ods).all()
        assert np.isfinite(norm.result.log_ods).all()
        # same weighted fits underneath
        np.testing.assert_array_equal(plug.result.beta_hat,
                                      norm.result.beta_hat)

    def test_workers_do_not_change_output(self):
        ds = make_binary_dataset(n=120, p=10, seed=37)
        a = run_screen(ds, small_options(workers=1))
        b = run_screen(ds, small_options(workers=2))
        np.testing.assert_array_equal(a.result.log_ods, b.result.log_ods)
        np.testing.assert_array_equal(a.result.q_value, b.result.q_value)

    def test_incompatible_loss_rejected(self):
        ds = make_survival_dataset(n=60, p=8)
        with pytest.raises(Exception, match="binomial"):
            run_screen(ds, small_options(loss="binomial"))


class TestRunQvalue:
    def test_model_columns_are_nan(self):
        ds = make_binary_dataset(n=120, p=10, seed=40)
        run = run_qvalue(ds, small_options())
        r = run.result
        assert np.isnan(r.ods).all() and np.isnan(r.post_null).all()
        assert np.isfinite(r.q_value).all()
        assert run.prior is None and run.grid is None

    def test_selections_are_q_thresholds(self):
        ds = make_binary_dataset(n=200, p=15, seed=41,
                                 beta=[1.5] + [0.0] * 14)
        run = run_qvalue(ds, small_options())
        r = run.result
        for sel in r.selections:
            np.testing.assert_array_equal(
                sel.indices, np.flatnonzero(r.q_value <= sel.level)
            )

    def test_matches_screen_competitor_columns(self):
        ds = make_binary_dataset(n=150, p=10, seed=42)
        a = run_screen(ds, small_options())
        b = run_qvalue(ds, small_options())
        np.testing.assert_array_equal(a.result.t_stat, b.result.t_stat)
        np.testing.assert_array_equal(a.result.q_value, b.result.q_value)
