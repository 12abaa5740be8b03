"""Scikit-learn style front end for the partially pooled synthetic control.

The estimator wraps the functional pipeline behind the familiar
``fit`` / ``get_params`` / ``set_params`` surface so it composes with
model-selection tooling. The input is a :class:`~stagsynth.panel.PanelData`
(or a path to a long-format CSV) rather than an (X, y) pair, so there is no
``predict``; fitted results live in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .effects import estimate_effects
from .inference import jackknife_se, wild_bootstrap_ci
from .panel import PanelData, default_config, load_panel
from .solver import SolveOptions, fit_panel


class PartiallyPooledSCM(BaseEstimator):
    """Partially pooled synthetic control for staggered adoption panels.

    Parameters
    ----------
    nu : float or None, default None
        Pooling weight in [0, 1]; 0 fits each treated unit separately, 1
        balances only the average treated unit. ``None`` selects the
        data-driven heuristic.
    lam : float or None
        Ridge penalty on the weights; ``None`` uses the scale-aware default.
    xi : float or None
        Relative weight on covariate balance; ``None`` uses the
        outcome-variance default when covariates are present.
    intercept : bool, default True
        Allow a per-unit level shift (weighted difference-in-differences form).
    cohort_mode : bool, default False
        Fully pool units that adopt at the same time.
    K : int or None
        Post-treatment horizon; ``None`` uses the largest feasible.
    lags : int or None
        Pre-treatment window per unit; ``None`` uses all available periods.
    att_start : int, default 0
        First event time entering the post-treatment average.
    """

    def __init__(self, nu=None, lam=None, xi=None, intercept=True,
                 cohort_mode=False, K=None, lags=None, tol=1e-10,
                 max_iter=10_000, att_start=0):
        self.nu = nu
        self.lam = lam
        self.xi = xi
        self.intercept = intercept
        self.cohort_mode = cohort_mode
        self.K = K
        self.lags = lags
        self.tol = tol
        self.max_iter = max_iter
        self.att_start = att_start

    def fit(self, panel, y=None):
        """Fit donor weights on a panel (PanelData or CSV path)."""
        if not isinstance(panel, PanelData):
            panel = load_panel(panel)
        cfg = default_config(panel, K=self.K, lags=self.lags)
        options = SolveOptions(nu=self.nu, lam=self.lam, xi=self.xi,
                               intercept=self.intercept,
                               cohort_mode=self.cohort_mode, tol=self.tol,
                               max_iter=self.max_iter)
        fit = fit_panel(panel, cfg, options)
        est = estimate_effects(panel, cfg, fit, att_start=self.att_start)
        self.panel_ = panel
        self.config_ = cfg
        self.fit_result_ = fit
        self.effects_ = est
        self.weights_ = fit.weights.gamma
        self.intercepts_ = fit.intercepts
        self.balance_ = fit.balance
        self.nu_ = fit.options.nu
        self.att_ = est.att
        self.att_k_ = est.att_k
        self.event_times_ = est.event_times
        return self

    def att(self) -> float:
        self._check_fitted()
        return self.att_

    def att_series(self) -> np.ndarray:
        """Event-time ATT series over ``-L .. K``."""
        self._check_fitted()
        return self.att_k_

    def confidence_interval(self, k: int = 0, method: str = "wild_bootstrap",
                            B: int = 1000, alpha_level: float = 0.05,
                            seed: int = 0):
        """Interval for ATT at event time ``k`` by bootstrap or jackknife."""
        self._check_fitted()
        if method == "wild_bootstrap":
            return wild_bootstrap_ci(self.panel_, self.config_,
                                     self.fit_result_, k, B=B,
                                     alpha_level=alpha_level, seed=seed)
        if method == "jackknife":
            return jackknife_se(self.panel_, self.config_,
                                self.fit_result_.options, k,
                                alpha_level=alpha_level)
        raise ValueError(f"unknown method {method!r}")

    def _check_fitted(self):
        if not hasattr(self, "fit_result_"):
            raise AttributeError("estimator is not fitted yet; call fit()")
