"""Pooling-weight selection, balance frontier tracing, and error-bound calculators.

The headline selector sets the pooling weight to the ratio of the pooled fit
to the average unit-level fit of the separate solution: when separate fits
already balance the average treated unit, little pooling is needed. The
balance possibility frontier traces the (q_sep, q_pool) trade-off over a nu
grid; a second selector picks the point where the frontier's tangent matches
the chord between its endpoints. The bound calculators are diagnostics for
simulation studies; they need generating-process parameters an analyst will
not usually have.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import balance as _balance
from .effects import estimate_effects
from .errors import BothZeroError
from .panel import EventConfig, PanelData, active_lags, default_config, donor_sets
from .solver import FitResult, SolveOptions, replace_options, resolve_options, solve


@dataclass(frozen=True)
class FrontierPoint:
    """One traced point of the balance possibility frontier."""

    nu: float
    q_sep: float
    q_pool: float
    q_sep_norm: float
    q_pool_norm: float
    att: float
    error: str | None = None


@dataclass(frozen=True)
class BoundInputs:
    """Generating-process summaries feeding the error bounds.

    For the autoregressive bound, ``coef_mean`` is the average lag-coefficient
    vector across treatment times and ``s`` its root mean squared dispersion.
    For the factor bound, ``coef_mean`` is the averaged projected factor value
    and ``s`` again the dispersion; ``m_bound`` caps the factor magnitudes and
    ``n_factors`` counts them. ``sigma`` is the noise scale and ``delta`` the
    tail-probability knob.
    """

    coef_mean: np.ndarray
    s: float
    sigma: float
    delta: float
    m_bound: float | None = None
    n_factors: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "coef_mean",
                           np.asarray(self.coef_mean, dtype=float))
        if self.s < 0 or self.sigma < 0 or self.delta < 0:
            raise ValueError("scale parameters must be nonnegative")


def heuristic_from_separate_fit(sep_fit: FitResult, panel: PanelData,
                                cfg: EventConfig) -> float:
    """Pooling weight implied by an already-solved separate (nu = 0) fit."""
    if sep_fit.cohort_balance is not None:
        report = sep_fit.cohort_balance
        lags = sep_fit.cohorts.lags
    else:
        report = sep_fit.balance
        lags = active_lags(panel, cfg)
    L = int(np.max(lags))
    denom = float(np.mean(np.sqrt(lags) * report.per_unit_q))
    if denom == 0.0:
        return 0.0
    return float(math.sqrt(L) * report.q_pool / denom)


def nu_heuristic(panel: PanelData, cfg: EventConfig | None = None,
                 options: SolveOptions | None = None) -> float:
    """Ratio of the pooled fit to the average unit-level fit at nu = 0.

    Bounded above by one (triangle inequality); returns zero when the
    separate fits are perfect, in which case no pooling is needed.
    """
    cfg = cfg if cfg is not None else default_config(panel)
    options = resolve_options(panel, cfg, options)
    norms = _balance.normalizers(panel, cfg, intercept=options.intercept,
                                 xi=options.xi, options=options)
    return heuristic_from_separate_fit(norms.separate_fit, panel, cfg)


def trace_frontier(panel: PanelData, cfg: EventConfig | None = None,
                   nu_grid=None, options: SolveOptions | None = None,
                   att_start: int = 0):
    """Solve across a nu grid and report the achieved imbalance trade-off.

    The endpoints nu = 0 and nu = 1 are always included; each interior solve
    warm-starts from the previous point. A failing point is recorded with its
    error message instead of aborting the trace.
    """
    cfg = cfg if cfg is not None else default_config(panel)
    options = resolve_options(panel, cfg, options)
    if nu_grid is None:
        nu_grid = default_nu_grid()
    grid = np.unique(np.clip(np.concatenate([[0.0, 1.0],
                                             np.asarray(nu_grid, float)]),
                             0.0, 1.0))
    donors = donor_sets(panel, cfg)
    norms = _balance.normalizers(panel, cfg, intercept=options.intercept,
                                 xi=options.xi, donors=donors, options=options)
    points = []
    init = None
    for nu in grid:
        opts = replace_options(options, nu=float(nu))
        try:
            fit = solve(panel, cfg, donors, opts, norms=norms, init=init)
        except Exception as exc:  # pragma: no cover - defensive per-point guard
            points.append(FrontierPoint(nu=float(nu), q_sep=math.nan,
                                        q_pool=math.nan, q_sep_norm=math.nan,
                                        q_pool_norm=math.nan, att=math.nan,
                                        error=str(exc)))
            continue
        init = (fit.cohort_weights if opts.cohort_mode
                else fit.weights.gamma)
        report = (fit.cohort_balance if fit.cohort_balance is not None
                  else fit.balance)
        est = estimate_effects(panel, cfg, fit, att_start=att_start)
        points.append(FrontierPoint(
            nu=float(nu), q_sep=report.q_sep, q_pool=report.q_pool,
            q_sep_norm=report.q_sep_norm, q_pool_norm=report.q_pool_norm,
            att=est.att))
    return points


def default_nu_grid() -> np.ndarray:
    """0 to 0.95 in steps of 0.05, then 0.99 and 1 (refined near full pooling)."""
    return np.concatenate([np.arange(0.0, 1.0, 0.05), [0.99, 1.0]])


def frontier_rows(points):
    """CSV rows ``nu,q_sep,q_pool,q_sep_norm,q_pool_norm,att``."""
    return [(p.nu, p.q_sep, p.q_pool, p.q_sep_norm, p.q_pool_norm, p.att)
            for p in points]


def tangent_nu(points) -> float:
    """Frontier point whose tangent matches the chord between the endpoints.

    Computed by finite differences on the traced (q_sep, q_pool) curve;
    returns the grid nu whose local slope is closest to the endpoint slope.
    """
    ok = [p for p in points if p.error is None]
    if len(ok) < 3:
        raise ValueError("tangent selection needs at least three frontier points")
    ok = sorted(ok, key=lambda p: p.nu)
    xs = np.array([p.q_sep for p in ok])
    ys = np.array([p.q_pool for p in ok])
    denom = xs[-1] - xs[0]
    if denom == 0:
        return float(ok[0].nu)
    chord = (ys[-1] - ys[0]) / denom
    best, best_gap = ok[1].nu, math.inf
    for i in range(1, len(ok) - 1):
        dx = xs[i + 1] - xs[i - 1]
        if dx == 0:
            continue
        slope = (ys[i + 1] - ys[i - 1]) / dx
        gap = abs(slope - chord)
        if gap < best_gap:
            best, best_gap = ok[i].nu, gap
    return float(best)


def oracle_nu_ar(inputs: BoundInputs, fit_sep: FitResult) -> float:
    """Bound-minimizing pooling weight under the autoregressive process.

    With ``a`` the pooled-fit bound term and ``b`` the unit-level one at the
    separate solution, returns ``a^2 / (a^2 + b^2)``; full pooling when the
    process is homogeneous (b = 0).
    """
    a = float(np.linalg.norm(inputs.coef_mean)) * fit_sep.balance.q_pool
    b = inputs.s * fit_sep.balance.q_sep
    if a == 0.0 and b == 0.0:
        raise BothZeroError("both bound terms vanish; nu is undefined")
    if b == 0.0:
        return 1.0
    return float(a ** 2 / (a ** 2 + b ** 2))


def ar_error_bound(coef_mean, s: float, sigma: float, delta: float, L: int,
                   J: int, q_pool: float, q_sep: float,
                   frob_norm: float) -> float:
    """Event-time-zero ATT error bound under a time-varying AR(L) process.

    Holds with probability at least ``1 - 2 exp(-delta^2 / 2)``.
    """
    rho = np.asarray(coef_mean, dtype=float)
    return float(
        math.sqrt(L) * np.linalg.norm(rho) * q_pool
        + math.sqrt(L) * s * q_sep
        + delta * sigma / math.sqrt(J) * (1.0 + frob_norm))


def bound_ar(inputs: BoundInputs, L: int, J: int, fit: FitResult) -> float:
    """AR error bound evaluated at a fit's achieved imbalances."""
    return ar_error_bound(inputs.coef_mean, inputs.s, inputs.sigma,
                          inputs.delta, L, J, fit.balance.q_pool,
                          fit.balance.q_sep, fit.frobenius_norm)


def lfm_error_bound(coef_mean, s: float, sigma: float, delta: float,
                    m_bound: float, n_factors: int, L: int, J: int, N: int,
                    q_pool: float, q_sep: float, frob_norm: float) -> float:
    """ATT error bound under a linear factor model with bounded factors.

    Holds with probability at least ``1 - 6 exp(-delta^2 / 2)``; the extra
    term relative to the AR bound prices balancing noisy outcomes instead of
    the latent loadings, and decays like ``1 / sqrt(L)``.
    """
    mu = np.asarray(coef_mean, dtype=float)
    approx = (sigma * m_bound ** 2 * n_factors / math.sqrt(L)
              * (3.0 * delta + 2.0 * math.sqrt(math.log(N * J))))
    return float(np.linalg.norm(mu) * q_pool + s * q_sep + approx
                 + delta * sigma / math.sqrt(J) * (1.0 + frob_norm))


def bound_lfm(inputs: BoundInputs, L: int, J: int, N: int,
              fit: FitResult) -> float:
    """Factor-model error bound evaluated at a fit's achieved imbalances."""
    if inputs.m_bound is None or inputs.n_factors is None:
        raise ValueError("factor bound needs m_bound and n_factors")
    return lfm_error_bound(inputs.coef_mean, inputs.s, inputs.sigma,
                           inputs.delta, inputs.m_bound, inputs.n_factors,
                           L, J, N, fit.balance.q_pool, fit.balance.q_sep,
                           fit.frobenius_norm)
