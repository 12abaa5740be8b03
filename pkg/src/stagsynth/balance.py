"""Imbalance functionals for donor-weight matrices.

Two aggregate measures drive everything downstream: the unit-level imbalance
``q_sep`` (root mean square of per-unit pre-treatment fits) and the pooled
imbalance ``q_pool`` (pre-treatment fit of the average treated unit, aligned
by lag). Both accept optional per-unit intercepts and have covariate
analogues. Normalized variants divide by the values attained by the separate
(nu = 0) solution, so the two objectives share a scale.

These functions are direct transcriptions of the defining formulas and are
deliberately independent of the solver's internal representation; the test
suite uses them to cross-check solver output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoCovariatesError
from .panel import EventConfig, PanelData, active_lags, active_treated


@dataclass(frozen=True)
class WeightMatrix:
    """An (N, J) matrix of donor weights, one simplex column per treated unit."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2:
            raise ValueError("gamma must be an (N, J) matrix")
        object.__setattr__(self, "gamma", g)
        g.setflags(write=False)

    def column(self, j: int) -> np.ndarray:
        return self.gamma[:, j]

    def validate(self, donors, totals=None, atol: float = 1e-8) -> None:
        """Check nonnegativity, column sums, and donor support."""
        g = self.gamma
        if (g < -atol).any():
            raise ValueError("weights must be nonnegative")
        sums = g.sum(axis=0)
        want = np.ones(g.shape[1]) if totals is None else np.asarray(totals, float)
        if not np.allclose(sums, want, atol=atol):
            raise ValueError(f"column sums {sums} differ from required {want}")
        for j, pool in enumerate(donors):
            off = np.setdiff1d(np.flatnonzero(np.abs(g[:, j]) > atol), pool)
            if len(off):
                raise ValueError(
                    f"column {j} puts weight on units outside its donor pool")


def _as_gamma(gamma) -> np.ndarray:
    return gamma.gamma if isinstance(gamma, WeightMatrix) else np.asarray(gamma, float)


def _as_alpha(alpha, J: int) -> np.ndarray:
    if alpha is None:
        return np.zeros(J)
    a = np.asarray(alpha, dtype=float).reshape(-1)
    if a.shape != (J,):
        raise ValueError(f"alpha must have one entry per treated unit ({J})")
    return a


def _pre_gaps(panel: PanelData, cfg: EventConfig, gamma: np.ndarray,
              alpha: np.ndarray):
    """Per treated unit: L_j-vector of lag-window gaps (lag 1 first)."""
    treated = active_treated(panel, cfg)
    lags = active_lags(panel, cfg)
    y = panel.outcomes
    gaps = []
    for j, u in enumerate(treated):
        p = int(panel.treat_time[u])
        lj = int(lags[j])
        cols = p - 1 - np.arange(lj)  # lag ell -> column p - ell
        gaps.append(y[u, cols] - alpha[j] - gamma[:, j] @ y[:, cols])
    return gaps


def q_unit(panel: PanelData, cfg: EventConfig, j: int, gamma_j,
           alpha_j: float | None = None) -> float:
    """Root mean squared pre-treatment gap for treated unit ``j``.

    ``j`` indexes the treated units in adoption order; ``gamma_j`` is a
    length-N weight vector and ``alpha_j`` an optional intercept (treated as
    zero when absent).
    """
    treated = active_treated(panel, cfg)
    lags = active_lags(panel, cfg)
    u = treated[j]
    p = int(panel.treat_time[u])
    lj = int(lags[j])
    cols = p - 1 - np.arange(lj)
    a = 0.0 if alpha_j is None else float(alpha_j)
    g = np.asarray(gamma_j, dtype=float)
    gap = panel.outcomes[u, cols] - a - g @ panel.outcomes[:, cols]
    return float(np.sqrt(np.mean(gap ** 2)))


def per_unit_q(panel: PanelData, cfg: EventConfig, gamma,
               alpha=None) -> np.ndarray:
    """Vector of ``q_unit`` values across treated units."""
    g = _as_gamma(gamma)
    a = _as_alpha(alpha, g.shape[1])
    gaps = _pre_gaps(panel, cfg, g, a)
    return np.array([np.sqrt(np.mean(e ** 2)) for e in gaps])


def q_sep(panel: PanelData, cfg: EventConfig, gamma, alpha=None) -> float:
    """Unit-level imbalance: root mean square of per-unit pre-treatment fits."""
    qj = per_unit_q(panel, cfg, gamma, alpha)
    return float(np.sqrt(np.mean(qj ** 2)))


def q_pool(panel: PanelData, cfg: EventConfig, gamma, alpha=None) -> float:
    """Pooled imbalance: pre-treatment fit of the average treated unit.

    Gaps are aligned by lag; at each lag the inner average divides by the
    full number of treated units J (units whose window is shorter than the
    lag contribute zero), matching the defining formula.
    """
    g = _as_gamma(gamma)
    a = _as_alpha(alpha, g.shape[1])
    gaps = _pre_gaps(panel, cfg, g, a)
    lags = active_lags(panel, cfg)
    L = int(lags.max())
    J = len(gaps)
    padded = np.zeros((J, L))
    for j, e in enumerate(gaps):
        padded[j, :len(e)] = e
    pooled = padded.sum(axis=0) / J
    return float(np.sqrt(np.mean(pooled ** 2)))


def q_covariates(panel: PanelData, gamma, cfg: EventConfig | None = None):
    """Unit-level and pooled covariate imbalance ``(q_sep_X, q_pool_X)``."""
    if panel.covariates is None:
        raise NoCovariatesError("panel carries no covariates")
    g = _as_gamma(gamma)
    cfg = cfg if cfg is not None else _trivial_config(panel)
    treated = active_treated(panel, cfg)
    x = panel.covariates
    gaps = np.stack([x[u] - g[:, j] @ x for j, u in enumerate(treated)])
    sep = float(np.sqrt(np.mean(np.sum(gaps ** 2, axis=1))))
    pool = float(np.linalg.norm(gaps.mean(axis=0)))
    return sep, pool


def _trivial_config(panel: PanelData) -> EventConfig:
    from .panel import default_config

    return default_config(panel)


@dataclass(frozen=True)
class BalanceReport:
    """Achieved imbalances of a weight matrix, raw and normalized."""

    q_sep: float
    q_pool: float
    q_sep_norm: float
    q_pool_norm: float
    per_unit_q: np.ndarray
    norm_constants: tuple
    q_sep_X: float | None = None
    q_pool_X: float | None = None
    degenerate_norms: tuple = (False, False)

    def to_dict(self) -> dict:
        d = {
            "q_sep": self.q_sep,
            "q_pool": self.q_pool,
            "q_sep_norm": self.q_sep_norm,
            "q_pool_norm": self.q_pool_norm,
            "per_unit_q": [float(v) for v in self.per_unit_q],
            "norm_constants": {"C_sep": self.norm_constants[0],
                               "C_pool": self.norm_constants[1]},
            "degenerate_norms": list(self.degenerate_norms),
        }
        if self.q_sep_X is not None:
            d["q_sep_X"] = self.q_sep_X
            d["q_pool_X"] = self.q_pool_X
        return d


def balance_report(panel: PanelData, cfg: EventConfig, gamma, alpha=None,
                   norm_constants=(1.0, 1.0), xi: float = 0.0,
                   degenerate=(False, False)) -> BalanceReport:
    """Evaluate all imbalance measures for a weight matrix."""
    qs = q_sep(panel, cfg, gamma, alpha)
    qp = q_pool(panel, cfg, gamma, alpha)
    c_sep, c_pool = norm_constants
    qx_sep = qx_pool = None
    if panel.covariates is not None and xi > 0:
        qx_sep, qx_pool = q_covariates(panel, gamma, cfg)
    return BalanceReport(
        q_sep=qs,
        q_pool=qp,
        q_sep_norm=qs / c_sep,
        q_pool_norm=qp / c_pool,
        per_unit_q=per_unit_q(panel, cfg, gamma, alpha),
        norm_constants=(float(c_sep), float(c_pool)),
        q_sep_X=qx_sep,
        q_pool_X=qx_pool,
        degenerate_norms=tuple(degenerate),
    )


@dataclass(frozen=True)
class Normalizers:
    """Scaling constants from the separate (nu = 0) solution.

    ``C_sep`` and ``C_pool`` divide the separate and pooled imbalances in the
    normalized objective. Without covariates they equal ``q_sep`` and
    ``q_pool`` at the separate solution; with covariates they are the
    combined outcome-plus-covariate imbalances. A constant that comes out
    exactly zero (perfect fit attainable) is replaced by one and flagged, so
    the normalized objective never divides by zero.
    """

    C_sep: float
    C_pool: float
    separate_fit: object
    degenerate: tuple = (False, False)


def normalizers(panel: PanelData, cfg: EventConfig, *, intercept: bool = False,
                xi: float | None = None, donors=None, options=None) -> Normalizers:
    """Solve the separate (nu = 0) problem and extract scaling constants."""
    from . import solver as _solver

    opts = options if options is not None else _solver.SolveOptions()
    opts = _solver.replace_options(opts, nu=0.0, intercept=intercept,
                                   xi=opts.xi if xi is None else xi)
    fit = _solver.solve_separate(panel, cfg, donors=donors, options=opts)
    xi_val = fit.options.xi
    report = fit.cohort_balance if fit.cohort_balance is not None else fit.balance
    qs = report.q_sep
    qp = report.q_pool
    if panel.covariates is not None and xi_val > 0:
        qxs, qxp = report.q_sep_X, report.q_pool_X
        c_sep = float(np.sqrt(qs ** 2 + xi_val * qxs ** 2))
        c_pool = float(np.sqrt(qp ** 2 + xi_val * qxp ** 2))
    else:
        c_sep, c_pool = qs, qp
    deg_sep, deg_pool = c_sep == 0.0, c_pool == 0.0
    return Normalizers(
        C_sep=1.0 if deg_sep else c_sep,
        C_pool=1.0 if deg_pool else c_pool,
        separate_fit=fit,
        degenerate=(deg_sep, deg_pool),
    )
