"""Resampling inference for event-time ATT estimates.

The wild (multiplier) bootstrap keeps weights and outcomes fixed: the ATT is
rewritten as an average of per-unit contributions, and only mean-zero
two-point multipliers on those contributions are redrawn. The jackknife
deletes one unit at a time and refits the weights with hyperparameters held
fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EventOutOfRangeError, NoDonorsError
from .panel import (EventConfig, PanelData, active_lags, active_treated,
                    default_config)
from .solver import FitResult, SolveOptions, fit_panel, resolve_options

# Two-point multiplier distribution with mean 0, variance 1, third moment 1:
# golden-ratio atoms -(sqrt(5)-1)/2 and (sqrt(5)+1)/2.
_SQRT5 = math.sqrt(5.0)
MULTIPLIER_ATOMS = (-(_SQRT5 - 1.0) / 2.0, (_SQRT5 + 1.0) / 2.0)
MULTIPLIER_PROBS = ((_SQRT5 + 1.0) / (2.0 * _SQRT5),
                    (_SQRT5 - 1.0) / (2.0 * _SQRT5))


@dataclass(frozen=True)
class InferenceResult:
    """A confidence interval (and optional standard error) for one ATT_k."""

    att_k: float
    ci_lower: float
    ci_upper: float
    method: str
    draws: int
    alpha_level: float
    seed: int | None
    k: int
    se: float | None = None
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "att_k": self.att_k,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "se": self.se,
            "method": self.method,
            "draws": self.draws,
            "alpha_level": self.alpha_level,
            "seed": self.seed,
            "skipped": self.skipped,
            # lower = att - upper quantile of the centered statistic
            "ci_orientation": "basic_bootstrap" if self.method == "wild_bootstrap"
                              else "plus_minus_2se",
        }


def draw_multipliers(rng: np.random.Generator, size) -> np.ndarray:
    """Draw wild-bootstrap multipliers from the two-point distribution."""
    atoms = np.array(MULTIPLIER_ATOMS)
    return atoms[(rng.random(size) < MULTIPLIER_PROBS[1]).astype(int)]


def unit_contributions(panel: PanelData, cfg: EventConfig, fit: FitResult,
                       k: int) -> np.ndarray:
    """Per-unit contributions whose mean over treated units equals ATT_k.

    Unit ``i`` collects, over every treated unit ``j``, the term
    ``(1{i = j} - gamma_ij) * v_i`` where ``v_i`` is the outcome at event
    time ``k`` relative to ``j``'s adoption, centered on ``j``'s lag window
    when the fit carries intercepts. The identity ``mean = ATT_k`` is exact
    in both modes.
    """
    if k > cfg.K:
        raise EventOutOfRangeError(f"event time {k} exceeds horizon {cfg.K}")
    treated = active_treated(panel, cfg)
    lags = active_lags(panel, cfg)
    gamma = fit.weights.gamma
    y = panel.outcomes
    out = np.zeros(panel.n_units)
    for j, u in enumerate(treated):
        p = int(panel.treat_time[u])
        v = y[:, p + k].copy()
        if fit.intercepts is not None:
            lj = int(lags[j])
            v -= y[:, p - lj:p].mean(axis=1)
        coef = -gamma[:, j]
        coef[u] += 1.0
        out += coef * v
    return out


def wild_bootstrap_ci(panel: PanelData, cfg: EventConfig, fit: FitResult,
                      k: int, B: int = 1000, alpha_level: float = 0.05,
                      seed: int = 0) -> InferenceResult:
    """Wild-bootstrap confidence interval for ATT_k.

    Draws ``B`` sets of multipliers, perturbs the centered unit contributions,
    and inverts the quantiles of the resulting statistic around the point
    estimate (basic bootstrap orientation).
    """
    if B < 100:
        raise ValueError("use at least 100 bootstrap draws")
    tau_tilde = unit_contributions(panel, cfg, fit, k)
    J = len(active_treated(panel, cfg))
    att_k = float(tau_tilde.sum() / J)
    rng = np.random.default_rng(seed)
    W = draw_multipliers(rng, (B, panel.n_units))
    S = W @ (tau_tilde - att_k) / J
    lo_q, hi_q = np.quantile(S, [alpha_level / 2.0, 1.0 - alpha_level / 2.0])
    return InferenceResult(att_k=att_k, ci_lower=att_k - float(hi_q),
                           ci_upper=att_k - float(lo_q),
                           method="wild_bootstrap", draws=B,
                           alpha_level=alpha_level, seed=seed, k=k)


def jackknife_variance(estimates) -> float:
    """Leave-one-out variance: ((n-1)/n) * sum of squared deviations."""
    est = np.asarray(estimates, dtype=float)
    n = len(est)
    if n < 2:
        return 0.0
    return float((n - 1) / n * np.sum((est - est.mean()) ** 2))


def jackknife_se(panel: PanelData, cfg: EventConfig,
                 options: SolveOptions | None, k: int,
                 alpha_level: float = 0.05) -> InferenceResult:
    """Leave-one-unit-out jackknife interval for ATT_k.

    Hyperparameters (nu, xi, lambda) are resolved once on the full sample and
    held fixed; every unit, treated or donor, is deleted in turn and the
    weights refit (normalization constants are recomputed per replicate since
    the separate solution changes). Deletions that empty a donor pool are
    skipped and counted. The interval is the estimate plus or minus twice the
    jackknife standard error.
    """
    if panel.n_units < 3:
        raise ValueError("jackknife needs at least 3 units")
    cfg = cfg if cfg is not None else default_config(panel)
    options = resolve_options(panel, cfg, options)
    full_fit = fit_panel(panel, cfg, options)
    options = full_fit.options  # nu now concrete and frozen across replicates
    from .effects import estimate_effects

    att_k = estimate_effects(panel, cfg, full_fit).att_at(k)

    treated_all = list(active_treated(panel, cfg))
    estimates = []
    skipped = 0
    for i in range(panel.n_units):
        try:
            sub = panel.drop_unit(i)
            cfg_i = _config_without(panel, cfg, i)
            fit_i = fit_panel(sub, cfg_i, options)
            est_i = estimate_effects(sub, cfg_i, fit_i)
            estimates.append(est_i.att_at(k))
        except NoDonorsError:
            skipped += 1
        except InsufficientTreated:
            skipped += 1
    if len(estimates) < 2:
        raise NoDonorsError("too few jackknife replicates survived deletion")
    var = jackknife_variance(estimates)
    se = math.sqrt(var)
    return InferenceResult(att_k=att_k, ci_lower=att_k - 2.0 * se,
                           ci_upper=att_k + 2.0 * se, method="jackknife",
                           draws=len(estimates), alpha_level=alpha_level,
                           seed=None, k=k, se=se, skipped=skipped)


class InsufficientTreated(Exception):
    """Internal: a deletion removed the last treated unit."""


def _config_without(panel: PanelData, cfg: EventConfig, i: int) -> EventConfig:
    """Re-index an event configuration after deleting unit ``i``."""
    treated = list(panel.treated)
    lags = []
    keep_units = []
    for j, u in enumerate(treated):
        if u == i:
            continue
        keep_units.append(u - 1 if u > i else u)
        lags.append(int(cfg.lags[j]))
    if not keep_units:
        raise InsufficientTreated
    restricted = None
    if cfg.treated_units is not None:
        restricted = tuple(u - 1 if u > i else u for u in cfg.treated_units
                           if u != i)
        if not restricted:
            raise InsufficientTreated
    return EventConfig(K=cfg.K, lags=np.array(lags), treated_units=restricted)
