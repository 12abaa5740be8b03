"""Treatment-effect estimation: unit-level gaps, event-time ATT series, robustness.

Unit-level effects are outcome gaps between each treated unit and its
synthetic control at a given event time; with an intercept the gap is
additionally centered on the pre-treatment window, giving the estimator a
weighted difference-in-differences form. Negative event times yield placebo
gaps. The event-time ATT averages the available unit-level effects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EventOutOfRangeError
from .panel import (EventConfig, PanelData, active_lags, active_treated,
                    default_config, restrict_config)
from .solver import FitResult, SolveOptions, fit_panel


@dataclass(frozen=True)
class EffectEstimates:
    """Effect estimates indexed by event time ``k`` in ``-L .. K``.

    ``tau[j, :]`` holds treated unit ``j``'s gaps; pre-treatment cells beyond
    the unit's lag window are NaN (absent, not zero). ``att_k`` averages the
    available gaps at each event time and ``att`` averages ``att_k`` over the
    post-treatment range.
    """

    event_times: np.ndarray
    tau: np.ndarray
    att_k: np.ndarray
    n_units_k: np.ndarray
    att: float
    per_unit_post_avg: np.ndarray
    treated_units: tuple
    K: int
    att_start: int = 0

    def att_at(self, k: int) -> float:
        if k > self.K or k < -(len(self.event_times) - self.K - 1):
            raise EventOutOfRangeError(f"event time {k} outside the estimated range")
        return float(self.att_k[np.searchsorted(self.event_times, k)])

    def to_rows(self):
        """Rows for the plot-ready CSV: event_time, att, n_units."""
        return [(int(k), float(a), int(n)) for k, a, n in
                zip(self.event_times, self.att_k, self.n_units_k)]

    def to_dict(self) -> dict:
        return {
            "event_times": [int(k) for k in self.event_times],
            "att_k": [_f(v) for v in self.att_k],
            "n_units_k": [int(v) for v in self.n_units_k],
            "att": _f(self.att),
            "tau": [[_f(v) for v in row] for row in self.tau],
            "per_unit_post_avg": [_f(v) for v in self.per_unit_post_avg],
            "treated_units": list(self.treated_units),
            "conventions": {
                "att_average": f"mean of att_k over k = {self.att_start}..{self.K}",
                "pre_window": "cells beyond a unit's lag window are null here "
                              "and zero-padded inside the imbalance norms",
            },
        }


def _f(v):
    return None if not np.isfinite(v) else float(v)


def estimate_effects(panel: PanelData, cfg: EventConfig, fit: FitResult,
                     att_start: int = 0) -> EffectEstimates:
    """Unit-level and averaged treatment effects implied by a fit.

    Without an intercept the effect is the raw outcome gap; with one, the
    fitted intercept is subtracted, which equals differencing both treated
    and synthetic series against their lag-window means.
    """
    treated = active_treated(panel, cfg)
    lags = active_lags(panel, cfg)
    gamma = fit.weights.gamma
    y = panel.outcomes
    J = len(treated)
    L, K = int(lags.max()), cfg.K
    ks = np.arange(-L, K + 1)
    tau = np.full((J, len(ks)), np.nan)
    for j, u in enumerate(treated):
        p = int(panel.treat_time[u])
        lj = int(lags[j])
        alpha = 0.0 if fit.intercepts is None else float(fit.intercepts[j])
        for idx, k in enumerate(ks):
            if k < 0 and -k > lj:
                continue
            col = p + k
            tau[j, idx] = y[u, col] - alpha - gamma[:, j] @ y[:, col]
    with np.errstate(invalid="ignore"):
        att_k = np.nanmean(tau, axis=0)
    n_units = np.sum(~np.isnan(tau), axis=0)
    post = (ks >= att_start) & (ks <= K)
    att = float(att_k[post].mean())
    per_unit = np.nanmean(tau[:, post], axis=1)
    return EffectEstimates(event_times=ks, tau=tau, att_k=att_k,
                           n_units_k=n_units, att=att,
                           per_unit_post_avg=per_unit,
                           treated_units=fit.treated_units, K=K,
                           att_start=att_start)


def placebo_in_time(panel: PanelData, cfg: EventConfig, shift: int,
                    options: SolveOptions | None = None,
                    att_start: int = 0) -> EffectEstimates:
    """Re-run the full pipeline with treatment re-indexed ``shift`` periods
    earlier, using only data that predates every true adoption.

    The placebo horizon is ``shift - 1``, so no estimate touches an actually
    treated cell. ``shift = 0`` reproduces the unshifted estimate.
    """
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    if shift == 0:
        fit = fit_panel(panel, cfg, options)
        return estimate_effects(panel, cfg, fit, att_start=att_start)
    shifted = panel.shift_treatment(shift)
    pos_all = shifted.treat_time[shifted.treated].astype(int)
    lags = np.minimum(cfg.lags, pos_all)
    cfg_shift = EventConfig(K=shift - 1, lags=lags,
                            treated_units=cfg.treated_units)
    fit = fit_panel(shifted, cfg_shift, options)
    return estimate_effects(shifted, cfg_shift, fit, att_start=att_start)


def trim_and_refit(panel: PanelData, cfg: EventConfig, drop_count: int,
                   options: SolveOptions | None = None,
                   att_start: int = 0):
    """Drop the ``drop_count`` worst-fit treated units and re-run the pipeline.

    Units are ranked by their unit-level pre-treatment fit from the full-fit
    solution (worst first). Dropped units keep their place in donor pools;
    only the treated set shrinks, and the normalization constants are
    recomputed on the reduced sample. Returns the new estimates and the
    labels of the dropped units.
    """
    treated = active_treated(panel, cfg)
    if not 0 <= drop_count < len(treated):
        raise ValueError("drop_count must be in [0, J)")
    fit = fit_panel(panel, cfg, options)
    if drop_count == 0:
        return estimate_effects(panel, cfg, fit, att_start=att_start), []
    order = np.argsort(-fit.balance.per_unit_q, kind="stable")
    dropped = treated[order[:drop_count]]
    kept = [u for u in treated if u not in set(dropped)]
    cfg_kept = restrict_config(panel, cfg, kept)
    refit = fit_panel(panel, cfg_kept, options)
    est = estimate_effects(panel, cfg_kept, refit, att_start=att_start)
    return est, [panel.unit_ids[u] for u in dropped]
