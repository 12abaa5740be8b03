"""Panel data model: treatment schedule, donor pools, event-time indexing, CSV I/O.

The canonical input is a long-format CSV with one row per (unit, time) cell:

    unit,time,outcome[,treat_time][,x_<name>...]

Times must form a uniformly spaced integer grid and every unit must be
observed at every time (rectangular panel). ``treat_time`` is the calendar
time of treatment adoption; an empty cell or the literal ``Inf`` marks a
never-treated unit. Internally treatment times are stored as positional
indices into the time grid, with ``math.inf`` as the never-treated sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import (
    InconsistentTreatmentError,
    InsufficientPrePeriodsError,
    NoDonorsError,
    RaggedPanelError,
)

NEVER = math.inf

_DEFAULT_SCHEMA = {"unit": "unit", "time": "time", "outcome": "outcome",
                   "treat_time": "treat_time"}


@dataclass(frozen=True)
class PanelData:
    """A rectangular outcome panel with a staggered treatment schedule.

    Attributes
    ----------
    outcomes : ndarray, shape (N, T)
        Outcome values, one row per unit, one column per time period.
    unit_ids : tuple of str
        Unit labels, aligned with the rows of ``outcomes``.
    times : ndarray, shape (T,)
        Strictly increasing, uniformly spaced integer calendar times.
    treat_time : ndarray, shape (N,)
        Position (0-based index into ``times``) of each unit's first treated
        period; ``math.inf`` for never-treated units.
    covariates : ndarray, shape (N, d), optional
        Time-invariant auxiliary covariates (standardized at ingestion).
    covariate_names : tuple of str, optional
    """

    outcomes: np.ndarray
    unit_ids: tuple
    times: np.ndarray
    treat_time: np.ndarray
    covariates: np.ndarray | None = None
    covariate_names: tuple | None = None

    def __post_init__(self):
        outcomes = np.asarray(self.outcomes, dtype=float)
        times = np.asarray(self.times, dtype=int)
        treat = np.asarray(self.treat_time, dtype=float)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "treat_time", treat)
        object.__setattr__(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        n, t = outcomes.shape
        if n < 2 or t < 2:
            raise ValueError(f"panel needs at least 2 units and 2 periods, got {n}x{t}")
        if len(self.unit_ids) != n or times.shape != (t,) or treat.shape != (n,):
            raise ValueError("inconsistent panel dimensions")
        if np.isnan(outcomes).any():
            i, j = np.argwhere(np.isnan(outcomes))[0]
            raise RaggedPanelError(
                f"missing outcome for unit {self.unit_ids[i]!r} at time {times[j]}")
        diffs = np.diff(times)
        if len(diffs) and (diffs <= 0).any():
            raise ValueError("times must be strictly increasing")
        if len(diffs) and (diffs != diffs[0]).any():
            raise ValueError("times must form a uniformly spaced grid (no gaps)")
        finite = np.isfinite(treat)
        if finite.any():
            vals = treat[finite]
            if (vals != np.round(vals)).any() or (vals < 0).any() or (vals > t - 1).any():
                raise ValueError("treat_time entries must index into the time grid")
        if not (~finite).any():
            raise NoDonorsError("panel has no never-treated unit")
        if self.covariates is not None:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.shape[0] != n or cov.ndim != 2:
                raise ValueError("covariates must be an (N, d) matrix")
            object.__setattr__(self, "covariates", cov)
            cov.setflags(write=False)
            if self.covariate_names is not None:
                object.__setattr__(self, "covariate_names",
                                   tuple(self.covariate_names))
        for arr in (outcomes, times, treat):
            arr.setflags(write=False)

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_times(self) -> int:
        return self.outcomes.shape[1]

    @property
    def treated(self) -> np.ndarray:
        """Unit indices of eventually treated units, ordered by adoption time."""
        idx = np.flatnonzero(np.isfinite(self.treat_time))
        return idx[np.argsort(self.treat_time[idx], kind="stable")]

    @property
    def n_treated(self) -> int:
        return int(np.isfinite(self.treat_time).sum())

    @property
    def never_treated(self) -> np.ndarray:
        return np.flatnonzero(~np.isfinite(self.treat_time))

    def unit_index(self) -> dict:
        return {u: i for i, u in enumerate(self.unit_ids)}

    def time_index(self) -> dict:
        return {int(t): i for i, t in enumerate(self.times)}

    def treat_calendar(self, i: int) -> float:
        """Calendar treatment time of unit ``i`` (``math.inf`` if never)."""
        p = self.treat_time[i]
        return float(self.times[int(p)]) if np.isfinite(p) else NEVER

    def drop_unit(self, i: int) -> "PanelData":
        """Return a copy of the panel without unit ``i``."""
        keep = np.arange(self.n_units) != i
        return PanelData(
            outcomes=self.outcomes[keep],
            unit_ids=tuple(u for k, u in enumerate(self.unit_ids) if k != i),
            times=self.times,
            treat_time=self.treat_time[keep],
            covariates=None if self.covariates is None else self.covariates[keep],
            covariate_names=self.covariate_names,
        )

    def shift_treatment(self, shift: int) -> "PanelData":
        """Re-index every treated unit's adoption ``shift`` periods earlier."""
        treat = self.treat_time.copy()
        finite = np.isfinite(treat)
        treat[finite] -= shift
        if (treat[finite] < 1).any():
            bad = np.flatnonzero(finite & (self.treat_time - shift < 1))[0]
            raise InsufficientPrePeriodsError(
                f"shift {shift} leaves unit {self.unit_ids[bad]!r} with no "
                "pre-treatment period")
        return replace(self, treat_time=treat)


@dataclass(frozen=True)
class EventConfig:
    """Event-time configuration: post horizon and per-unit lag windows.

    ``K`` is the largest post-treatment event time; ``lags[j]`` is the number
    of pre-treatment periods balanced for treated unit ``j`` (units ordered by
    adoption time). ``treated_units`` optionally restricts the analysis to a
    subset of treated units (used by trimming); donor pools are unaffected.
    """

    K: int
    lags: np.ndarray
    treated_units: tuple | None = None

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=int)
        object.__setattr__(self, "lags", lags)
        lags.setflags(write=False)
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if (lags < 1).any():
            raise ValueError("every lag window must contain at least one period")
        if self.treated_units is not None:
            object.__setattr__(self, "treated_units",
                               tuple(int(u) for u in self.treated_units))

    @property
    def L(self) -> int:
        return int(self.lags.max())


def default_config(panel: PanelData, K: int | None = None,
                   lags: int | np.ndarray | None = None) -> EventConfig:
    """Build an :class:`EventConfig` with spec defaults.

    ``K`` defaults to the largest horizon supported by every treated unit;
    ``lags`` defaults to all available pre-treatment periods per unit. An
    integer ``lags`` is clipped per unit to the available pre-periods.
    """
    treated = panel.treated
    if len(treated) == 0:
        raise NoDonorsError("panel has no treated unit to analyze")
    pos = panel.treat_time[treated].astype(int)
    if (pos < 1).any():
        bad = treated[pos < 1][0]
        raise InsufficientPrePeriodsError(
            f"unit {panel.unit_ids[bad]!r} is treated in the first observed "
            "period and has no pre-treatment data; drop it before fitting")
    max_k = panel.n_times - 1 - int(pos.max())
    if K is None:
        K = max_k
    if K > max_k:
        last = treated[np.argmax(pos)]
        raise ValueError(
            f"K={K} exceeds the {max_k} post-periods available for unit "
            f"{panel.unit_ids[last]!r}")
    if lags is None:
        lag_arr = pos.copy()
    elif np.isscalar(lags):
        lag_arr = np.minimum(int(lags), pos)
    else:
        lag_arr = np.asarray(lags, dtype=int)
        if lag_arr.shape != pos.shape:
            raise ValueError("lags must have one entry per treated unit")
        if (lag_arr > pos).any():
            bad = treated[lag_arr > pos][0]
            raise ValueError(
                f"lag window for unit {panel.unit_ids[bad]!r} exceeds its "
                "pre-treatment periods")
    return EventConfig(K=int(K), lags=lag_arr)


def active_treated(panel: PanelData, cfg: EventConfig) -> np.ndarray:
    """Treated unit indices in scope for ``cfg``, ordered by adoption time."""
    treated = panel.treated
    if cfg.treated_units is None:
        return treated
    keep = set(cfg.treated_units)
    return np.array([u for u in treated if u in keep], dtype=int)


def active_lags(panel: PanelData, cfg: EventConfig) -> np.ndarray:
    """Lag windows aligned with :func:`active_treated`."""
    treated = panel.treated
    if cfg.lags.shape[0] != len(treated):
        raise ValueError("config lags are not aligned with the treated units")
    if cfg.treated_units is None:
        return cfg.lags
    keep = set(cfg.treated_units)
    mask = np.array([u in keep for u in treated])
    return cfg.lags[mask]


def restrict_config(panel: PanelData, cfg: EventConfig,
                    treated_units) -> EventConfig:
    """Restrict ``cfg`` to a subset of treated units (donor pools unchanged)."""
    return EventConfig(K=cfg.K, lags=cfg.lags, treated_units=tuple(treated_units))


@dataclass(frozen=True)
class DonorSets:
    """Per-treated-unit donor pools, aligned with :func:`active_treated`."""

    pools: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "pools", tuple(np.asarray(p, dtype=int) for p in self.pools))

    def __iter__(self):
        return iter(self.pools)

    def __len__(self):
        return len(self.pools)

    def __getitem__(self, j):
        return self.pools[j]


def donor_sets(panel: PanelData, cfg: EventConfig) -> DonorSets:
    """Donor pools: units still untreated ``K`` periods after each adoption.

    Unit ``i`` may donate to treated unit ``j`` when its own adoption comes
    strictly after ``T_j + K``; never-treated units qualify everywhere. Pools
    are fixed across event times ``k <= K``.
    """
    treated = active_treated(panel, cfg)
    pools = []
    for j, u in enumerate(treated):
        cutoff = panel.treat_time[u] + cfg.K
        pool = np.flatnonzero(panel.treat_time > cutoff)
        pool = pool[pool != u]
        if len(pool) == 0:
            raise NoDonorsError(
                f"treated unit {panel.unit_ids[u]!r} has an empty donor pool "
                f"(no unit untreated {cfg.K} periods after its adoption)")
        pools.append(pool)
    return DonorSets(pools=tuple(pools))


def demean_residuals(panel: PanelData, cfg: EventConfig) -> np.ndarray:
    """Residualize every unit's series against its lag-window mean, per treated unit.

    Returns an array of shape (J, N, T): entry (j, i, t) is
    ``Y[i, t] - mean(Y[i, T_j - L_j : T_j])``, the outcome of unit ``i`` less
    its average over treated unit ``j``'s lag window. Within each window the
    residuals sum to zero by construction.
    """
    treated = active_treated(panel, cfg)
    lags = active_lags(panel, cfg)
    out = np.empty((len(treated), panel.n_units, panel.n_times))
    for j, u in enumerate(treated):
        p = int(panel.treat_time[u])
        window = panel.outcomes[:, p - int(lags[j]):p]
        out[j] = panel.outcomes - window.mean(axis=1, keepdims=True)
    return out


def load_panel(path, schema: dict | None = None) -> PanelData:
    """Load a long-format CSV into a :class:`PanelData`.

    Parameters
    ----------
    path : str or Path
        CSV with columns ``unit,time,outcome[,treat_time][,x_<name>...]``.
    schema : dict, optional
        Overrides for the column names, keys ``unit``, ``time``, ``outcome``,
        ``treat_time``, and optionally ``covariates`` (list of column names;
        by default every column starting with ``x_`` is a covariate).

    Covariate columns must be constant within unit; they are standardized to
    mean zero and unit variance across units at ingestion.
    """
    cols = dict(_DEFAULT_SCHEMA)
    cov_cols = None
    if schema:
        cov_cols = schema.get("covariates")
        cols.update({k: v for k, v in schema.items() if k in _DEFAULT_SCHEMA})
    df = pd.read_csv(path)
    for key in ("unit", "time", "outcome"):
        if cols[key] not in df.columns:
            raise ValueError(f"input file lacks required column {cols[key]!r}")
    if cov_cols is None:
        cov_cols = [c for c in df.columns if c.startswith("x_")]

    units = [str(u) for u in pd.unique(df[cols["unit"]])]
    times = np.sort(pd.unique(df[cols["time"]].astype(int)))
    uidx = {u: i for i, u in enumerate(units)}
    tidx = {int(t): i for i, t in enumerate(times)}

    n, t = len(units), len(times)
    counts = np.zeros((n, t), dtype=int)
    outcomes = np.full((n, t), np.nan)
    rows_u = df[cols["unit"]].astype(str).map(uidx).to_numpy()
    rows_t = df[cols["time"]].astype(int).map(tidx).to_numpy()
    np.add.at(counts, (rows_u, rows_t), 1)
    if (counts > 1).any():
        i, j = np.argwhere(counts > 1)[0]
        raise RaggedPanelError(
            f"duplicate rows for unit {units[i]!r} at time {times[j]}")
    if (counts == 0).any():
        i, j = np.argwhere(counts == 0)[0]
        raise RaggedPanelError(
            f"missing row for unit {units[i]!r} at time {times[j]}")
    outcomes[rows_u, rows_t] = df[cols["outcome"]].astype(float).to_numpy()

    treat = np.full(n, NEVER)
    if cols["treat_time"] in df.columns:
        raw = df[cols["treat_time"]]
        for u, i in uidx.items():
            vals = raw[rows_u == i]
            parsed = {_parse_treat_time(v) for v in vals}
            if len(parsed) != 1:
                raise InconsistentTreatmentError(
                    f"unit {u!r} has conflicting treat_time values {sorted(parsed)}")
            (val,) = parsed
            if math.isinf(val):
                continue
            if val > times[-1]:
                treat[i] = NEVER  # adopts after the panel ends
            elif int(val) not in tidx:
                raise InconsistentTreatmentError(
                    f"unit {u!r} has treat_time {val} off the time grid")
            else:
                treat[i] = tidx[int(val)]

    covariates = names = None
    if cov_cols:
        covariates = np.empty((n, len(cov_cols)))
        for c, col in enumerate(cov_cols):
            series = df[col].astype(float).to_numpy()
            for u, i in uidx.items():
                vals = np.unique(series[rows_u == i])
                if len(vals) != 1:
                    raise ValueError(
                        f"covariate {col!r} varies within unit {u!r}; fold "
                        "time-varying covariates into pre-treatment values")
                covariates[i, c] = vals[0]
        covariates = standardize_covariates(covariates)
        names = tuple(cov_cols)

    return PanelData(outcomes=outcomes, unit_ids=tuple(units), times=times,
                     treat_time=treat, covariates=covariates,
                     covariate_names=names)


def _parse_treat_time(value) -> float:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return NEVER
    s = str(value).strip()
    if s == "" or s.lower() in ("inf", "infinity", "nan"):
        return NEVER
    return float(s)


def standardize_covariates(x: np.ndarray) -> np.ndarray:
    """Center and scale each covariate column to mean zero, variance one."""
    x = np.asarray(x, dtype=float)
    centered = x - x.mean(axis=0)
    sd = centered.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0  # constant columns stay at zero after centering
    return centered / sd


def write_panel(panel: PanelData, path) -> None:
    """Write ``panel`` back to long-format CSV (inverse of :func:`load_panel`)."""
    n, t = panel.outcomes.shape
    rows = {
        "unit": np.repeat(panel.unit_ids, t),
        "time": np.tile(panel.times, n),
        "outcome": panel.outcomes.ravel(),
        "treat_time": np.repeat(
            [("Inf" if not np.isfinite(p) else int(panel.times[int(p)]))
             for p in panel.treat_time], t),
    }
    if panel.covariates is not None:
        names = panel.covariate_names or tuple(
            f"x_{c}" for c in range(panel.covariates.shape[1]))
        for c, name in enumerate(names):
            rows[name] = np.repeat(panel.covariates[:, c], t)
    pd.DataFrame(rows).to_csv(path, index=False)
