import numpy as np
import pytest

import stagsynth as ss
from stagsynth.inference import (MULTIPLIER_ATOMS, MULTIPLIER_PROBS,
                                 draw_multipliers, jackknife_variance)
from conftest import make_panel


class TestMultipliers:
    def test_analytic_moments(self):
        a, b = MULTIPLIER_ATOMS
        pa, pb = MULTIPLIER_PROBS
        assert pa + pb == pytest.approx(1.0, abs=1e-15)
        for order, target in ((1, 0.0), (2, 1.0), (3, 1.0)):
            moment = pa * a ** order + pb * b ** order
            assert moment == pytest.approx(target, abs=1e-12)

    def test_sample_moments(self):
        rng = np.random.default_rng(123)
        w = draw_multipliers(rng, 100_000)
        for order, target in ((1, 0.0), (2, 1.0), (3, 1.0)):
            sample = w ** order
            se = sample.std(ddof=1) / np.sqrt(len(w))
            assert abs(sample.mean() - target) <= 3 * se


class TestUnitContributions:
    def test_zero_weight_never_treated(self, small_panel):
        cfg = ss.default_config(small_panel)
        fit = ss.fit_panel(small_panel, cfg, ss.SolveOptions(nu=0.5))
        gamma = fit.weights.gamma
        tc = ss.unit_contributions(small_panel, cfg, fit, 0)
        for i in small_panel.never_treated:
            if np.all(gamma[i] == 0.0):
                assert tc[i] == 0.0

    @pytest.mark.parametrize("intercept", [False, True])
    def test_identity_exact(self, small_panel, intercept):
        cfg = ss.default_config(small_panel)
        fit = ss.fit_panel(small_panel, cfg,
                           ss.SolveOptions(nu=0.5, intercept=intercept))
        est = ss.estimate_effects(small_panel, cfg, fit)
        for k in range(cfg.K + 1):
            tc = ss.unit_contributions(small_panel, cfg, fit, k)
            assert tc.sum() / 2 == pytest.approx(est.att_at(k), abs=1e-12)

    def test_single_treated_sums_to_att(self):
        outcomes = np.array([[1.0, 1.0, 5.0], [1.0, 1.0, 3.0]])
        panel = make_panel(2, 3, (2,), outcomes=outcomes)
        cfg = ss.default_config(panel)
        fit = ss.solve(panel, cfg, options=ss.SolveOptions(nu=0.0))
        tc = ss.unit_contributions(panel, cfg, fit, 0)
        est = ss.estimate_effects(panel, cfg, fit)
        assert tc.sum() == pytest.approx(1 * est.att_at(0), abs=1e-12)

    def test_out_of_range(self, small_panel):
        cfg = ss.default_config(small_panel)
        fit = ss.fit_panel(small_panel, cfg, ss.SolveOptions(nu=0.5))
        with pytest.raises(ss.EventOutOfRangeError):
            ss.unit_contributions(small_panel, cfg, fit, cfg.K + 1)


class TestWildBootstrap:
    def test_deterministic_given_seed(self, small_panel):
        cfg = ss.default_config(small_panel)
        fit = ss.fit_panel(small_panel, cfg, ss.SolveOptions(nu=0.5))
        a = ss.wild_bootstrap_ci(small_panel, cfg, fit, 0, B=400, seed=9)
        b = ss.wild_bootstrap_ci(small_panel, cfg, fit, 0, B=400, seed=9)
        assert (a.ci_lower, a.ci_upper) == (b.ci_lower, b.ci_upper)

    def test_interval_contains_orientation(self, small_panel):
        cfg = ss.default_config(small_panel)
        fit = ss.fit_panel(small_panel, cfg, ss.SolveOptions(nu=0.5))
        res = ss.wild_bootstrap_ci(small_panel, cfg, fit, 0, B=500, seed=1)
        assert res.ci_lower <= res.ci_upper
        assert res.method == "wild_bootstrap"
        assert res.to_dict()["ci_orientation"] == "basic_bootstrap"

    def test_zero_dispersion_collapses(self):
        # every unit's series is constant, so with an intercept each unit's
        # contribution is exactly zero and the statistic has no dispersion;
        # the interval collapses onto the point estimate
        levels = np.array([1.0, 2.5, -3.0, 4.0])
        outcomes = np.tile(levels[:, None], (1, 7))
        panel = make_panel(4, 7, (5, 5), outcomes=outcomes)
        cfg = ss.default_config(panel)
        fit = ss.solve(panel, cfg,
                       options=ss.SolveOptions(nu=0.0, intercept=True))
        tc = ss.unit_contributions(panel, cfg, fit, 0)
        np.testing.assert_array_equal(tc, 0.0)
        res = ss.wild_bootstrap_ci(panel, cfg, fit, 0, B=300, seed=3)
        assert res.att_k == 0.0
        assert res.ci_lower == 0.0 and res.ci_upper == 0.0

    def test_width_stable_across_seeds(self):
        panel = make_panel(9, 14, (7, 8), seed=6)
        cfg = ss.default_config(panel)
        fit = ss.fit_panel(panel, cfg, ss.SolveOptions(nu=0.5,
                                                       intercept=True))
        widths = []
        for seed in (1, 2):
            res = ss.wild_bootstrap_ci(panel, cfg, fit, 0, B=2000, seed=seed)
            widths.append(res.ci_upper - res.ci_lower)
        assert abs(widths[0] - widths[1]) <= 0.2 * max(widths)

    def test_minimum_draws(self, small_panel):
        cfg = ss.default_config(small_panel)
        fit = ss.fit_panel(small_panel, cfg, ss.SolveOptions(nu=0.5))
        with pytest.raises(ValueError):
            ss.wild_bootstrap_ci(small_panel, cfg, fit, 0, B=10)


class TestJackknife:
    def test_variance_formula(self):
        # estimates {0, 1}: (1/2) * ((0 - .5)^2 + (1 - .5)^2) = 0.25
        assert jackknife_variance([0.0, 1.0]) == pytest.approx(0.25,
                                                               abs=1e-15)

    def test_zero_spread(self):
        assert jackknife_variance([0.5, 0.5, 0.5]) == 0.0

    def test_interval_and_se(self):
        panel = make_panel(7, 11, (6, 7), seed=3)
        cfg = ss.default_config(panel)
        res = ss.jackknife_se(panel, cfg, ss.SolveOptions(nu=0.4), 0)
        assert res.method == "jackknife"
        assert res.se is not None and res.se >= 0
        assert res.ci_lower == pytest.approx(res.att_k - 2 * res.se)
        assert res.ci_upper == pytest.approx(res.att_k + 2 * res.se)
        assert res.draws + res.skipped == panel.n_units

    def test_deleting_irrelevant_zero_weight_unit(self):
        # a donor far outside the hull gets exactly zero weight in both the
        # separate and the main fits; deleting it must not move the estimate
        rng = np.random.default_rng(4)
        donors = rng.normal(size=(3, 9)) * 0.1
        treated = donors[:2].mean(axis=0) + 0.01 * rng.normal(size=9)
        far = donors[0] + 40.0
        outcomes = np.vstack([treated, donors, far])
        panel = make_panel(5, 9, (6,), outcomes=outcomes)
        cfg = ss.default_config(panel)
        opts = ss.SolveOptions(nu=0.3, intercept=False)
        fit = ss.fit_panel(panel, cfg, opts)
        assert np.all(fit.weights.gamma[4] == 0.0)
        est = ss.estimate_effects(panel, cfg, fit)
        sub = panel.drop_unit(4)
        fit_sub = ss.fit_panel(sub, cfg, opts)
        est_sub = ss.estimate_effects(sub, cfg, fit_sub)
        assert est_sub.att_at(0) == pytest.approx(est.att_at(0), abs=1e-8)

    def test_skips_fatal_deletions(self):
        # only one never-treated unit: deleting it invalidates the panel and
        # the replicate is skipped, not fatal
        panel = make_panel(4, 9, (5, 6), seed=8)
        keep = panel.drop_unit(3)  # leaves a single never-treated unit
        cfg = ss.default_config(keep)
        res = ss.jackknife_se(keep, cfg, ss.SolveOptions(nu=0.4), 0)
        assert res.skipped >= 1
        assert res.draws == keep.n_units - res.skipped
