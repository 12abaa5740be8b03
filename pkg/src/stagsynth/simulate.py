"""Calibrated generating processes, treatment selection, and a Monte Carlo runner.

Three outcome processes are supported: a two-way fixed effects model, a
two-factor model layered on top of it, and a random-coefficient AR(3) whose
lag coefficients are redrawn each period (with an inflated dispersion) to
create heterogeneity across time. Treatment is assigned by sweeping a fixed
grid of adoption times and flipping a logistic coin per not-yet-treated unit,
with a score that depends on the process. All replicates impose a sharp null:
observed outcomes equal the untreated series, so every true effect is zero.

Shipped default parameters are synthetic round numbers sized like a state-year
panel (N = 49, T = 39); calibrate() re-estimates them from user data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .effects import estimate_effects
from .errors import AllTreatedError, InsufficientDataError, StagsynthError
from .inference import wild_bootstrap_ci
from .panel import NEVER, PanelData, default_config, donor_sets
from .solver import (SolveOptions, fit_panel, replace_options,
                     resolve_options, solve, uniform_fit)
from . import balance as _balance
from .tuning import heuristic_from_separate_fit

DEFAULT_GRID = (6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 21, 24, 27, 29)
_AR_BURN_IN = 30


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of one outcome-generating process.

    ``unit_cov`` is the full covariance of the latent unit terms (a scalar
    variance for twfe, 3x3 for the factor model where the terms are the unit
    effect and two loadings); ``unit_sd`` is a convenience scalar used when
    ``unit_cov`` is absent. The AR process redraws its three lag coefficients
    every period from a normal with ``ar_sd_inflation`` times the calibrated
    spread.
    """

    kind: str
    N: int = 49
    T: int = 39
    intercept: float = 0.0
    unit_sd: float = 0.2
    unit_cov: np.ndarray | None = None
    time_effects: np.ndarray | None = None
    factor_values: np.ndarray | None = None
    noise_sd: float = 0.05
    ar_coefs_mean: tuple = (0.5, 0.25, 0.1)
    ar_coefs_sd: float = 0.02
    ar_sd_inflation: float = 8.0

    def __post_init__(self):
        if self.kind not in ("twfe", "factor", "ar"):
            raise ValueError(f"unknown dgp kind {self.kind!r}")
        if self.noise_sd < 0 or self.unit_sd < 0 or self.ar_coefs_sd < 0:
            raise ValueError("scale parameters must be nonnegative")
        if self.ar_sd_inflation <= 0:
            raise ValueError("ar_sd_inflation must be positive")

    def resolved_time_effects(self) -> np.ndarray:
        if self.time_effects is not None:
            v = np.asarray(self.time_effects, dtype=float)
            if v.shape != (self.T,):
                raise ValueError("time_effects must have length T")
            return v - v.mean()
        t = np.linspace(-1.0, 1.0, self.T)
        return 0.3 * t

    def resolved_factor_values(self) -> np.ndarray:
        if self.factor_values is not None:
            m = np.asarray(self.factor_values, dtype=float)
            if m.shape != (self.T, 2):
                raise ValueError("factor_values must be (T, 2)")
            return m
        t = np.arange(self.T)
        return np.column_stack([
            0.5 * np.sin(2.0 * np.pi * t / self.T),
            (t / (self.T - 1)) - 0.5,
        ])

    def resolved_unit_cov(self) -> np.ndarray:
        if self.unit_cov is not None:
            cov = np.atleast_2d(np.asarray(self.unit_cov, dtype=float))
            return cov
        if self.kind == "factor":
            return np.diag([self.unit_sd ** 2, 0.15 ** 2, 0.15 ** 2])
        return np.array([[self.unit_sd ** 2]])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "N": self.N, "T": self.T,
            "intercept": self.intercept, "unit_sd": self.unit_sd,
            "unit_cov": None if self.unit_cov is None
            else np.asarray(self.unit_cov).tolist(),
            "time_effects": None if self.time_effects is None
            else np.asarray(self.time_effects).tolist(),
            "factor_values": None if self.factor_values is None
            else np.asarray(self.factor_values).tolist(),
            "noise_sd": self.noise_sd,
            "ar_coefs_mean": list(self.ar_coefs_mean),
            "ar_coefs_sd": self.ar_coefs_sd,
            "ar_sd_inflation": self.ar_sd_inflation,
        }


@dataclass(frozen=True)
class SelectionSpec:
    """Logistic selection into treatment over a fixed adoption-time grid.

    At each grid time, every not-yet-treated unit adopts with probability
    ``expit(theta0 + theta1 * score)``. The score is the latent unit effect
    (twfe), the unit effect plus both factor loadings (factor), or the sum of
    the three outcomes immediately preceding the candidate time (ar).
    """

    theta0: float
    theta1: float
    grid: tuple = DEFAULT_GRID
    score: str = "unit_effect"

    def __post_init__(self):
        if self.score not in ("unit_effect", "unit_plus_loadings", "lag_sum_3"):
            raise ValueError(f"unknown selection score {self.score!r}")
        grid = tuple(int(g) for g in self.grid)
        if any(g < 1 for g in grid) or list(grid) != sorted(set(grid)):
            raise ValueError("grid must be increasing positions >= 1")
        if self.score == "lag_sum_3" and any(g < 3 for g in grid):
            raise ValueError("lag-sum selection needs 3 periods before each "
                             "grid time")
        object.__setattr__(self, "grid", grid)

    def to_dict(self) -> dict:
        return {"theta0": self.theta0, "theta1": self.theta1,
                "grid": list(self.grid), "score": self.score}


def default_selection(kind: str, grid=DEFAULT_GRID) -> SelectionSpec:
    if kind == "twfe":
        return SelectionSpec(theta0=-2.7, theta1=-1.0, grid=grid,
                             score="unit_effect")
    if kind == "factor":
        return SelectionSpec(theta0=-2.7, theta1=-1.0, grid=grid,
                             score="unit_plus_loadings")
    return SelectionSpec(theta0=math.log(0.04), theta1=-2.0, grid=grid,
                         score="lag_sum_3")


@dataclass(frozen=True)
class SimDraw:
    """One simulated untreated panel plus the latents selection may need."""

    panel: PanelData
    unit_scores: np.ndarray | None
    rho_path: np.ndarray | None = None     # (T, 3) realized AR coefficients
    loadings: np.ndarray | None = None     # (N, 2) for the factor process
    unit_effects: np.ndarray | None = None


def generate_draw(dgp: DgpSpec, seed) -> SimDraw:
    """Draw untreated outcomes and the latent quantities behind them."""
    rng = np.random.default_rng(seed)
    n, t = dgp.N, dgp.T
    if dgp.kind == "ar":
        total = t + _AR_BURN_IN
        mean = np.asarray(dgp.ar_coefs_mean, dtype=float)
        sd = dgp.ar_sd_inflation * dgp.ar_coefs_sd
        rho = mean + sd * rng.standard_normal((total, 3))
        y = np.zeros((n, total))
        y[:, :3] = dgp.noise_sd * rng.standard_normal((n, 3))
        eps = dgp.noise_sd * rng.standard_normal((n, total))
        for s in range(3, total):
            y[:, s] = y[:, s - 3:s][:, ::-1] @ rho[s] + eps[:, s]
        outcomes = y[:, _AR_BURN_IN:]
        panel = PanelData(outcomes=outcomes + dgp.intercept,
                          unit_ids=_unit_labels(n),
                          times=np.arange(t), treat_time=np.full(n, NEVER))
        return SimDraw(panel=panel, unit_scores=None,
                       rho_path=rho[_AR_BURN_IN:])

    cov = dgp.resolved_unit_cov()
    draws = rng.multivariate_normal(np.zeros(cov.shape[0]), cov, size=n)
    unit = draws[:, 0]
    time_fx = dgp.resolved_time_effects()
    eps = dgp.noise_sd * rng.standard_normal((n, t))
    outcomes = dgp.intercept + unit[:, None] + time_fx[None, :] + eps
    loadings = None
    scores = unit
    if dgp.kind == "factor":
        if cov.shape[0] != 3:
            raise ValueError("factor process needs a 3x3 unit covariance")
        loadings = draws[:, 1:3]
        outcomes = outcomes + loadings @ dgp.resolved_factor_values().T
        scores = unit + loadings.sum(axis=1)
    panel = PanelData(outcomes=outcomes, unit_ids=_unit_labels(n),
                      times=np.arange(t), treat_time=np.full(n, NEVER))
    return SimDraw(panel=panel, unit_scores=scores, loadings=loadings,
                   unit_effects=unit)


def generate(dgp: DgpSpec, seed) -> PanelData:
    """Untreated outcome panel for one replicate (treatment not yet assigned)."""
    return generate_draw(dgp, seed).panel


def _unit_labels(n: int):
    return tuple(f"u{i:03d}" for i in range(n))


def assign_treatment(panel: PanelData, sel: SelectionSpec, seed,
                     scores=None) -> PanelData:
    """Sweep the adoption grid and assign treatment times by logistic draws.

    ``scores`` supplies the latent selection score for the unit-effect kinds
    (see :class:`SimDraw`); the lag-sum score is computed from the panel.
    Raises :class:`AllTreatedError` when no never-treated unit remains.
    """
    rng = np.random.default_rng(seed)
    n = panel.n_units
    if sel.score != "lag_sum_3":
        if scores is None:
            raise ValueError(f"selection score {sel.score!r} needs latent scores")
        scores = np.asarray(scores, dtype=float)
    treat = np.full(n, NEVER)
    for g in sel.grid:
        untreated = ~np.isfinite(treat)
        if sel.score == "lag_sum_3":
            s = panel.outcomes[:, g - 3:g].sum(axis=1)
        else:
            s = scores
        pi = _expit(sel.theta0 + sel.theta1 * s)
        adopt = untreated & (rng.random(n) < pi)
        treat[adopt] = g
    if np.isfinite(treat).all():
        raise AllTreatedError("no never-treated unit left after assignment")
    return replace(panel, treat_time=treat)


def _expit(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator evaluated inside the Monte Carlo loop.

    ``kind`` is ``"scm"`` (partially pooled weights; ``nu=None`` uses the
    heuristic) or ``"did"`` (uniform donor weights with an intercept).
    ``inference`` switches on wild-bootstrap coverage tracking.
    """

    name: str
    kind: str = "scm"
    nu: float | None = None
    intercept: bool = True
    inference: bool = False
    options: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        if self.kind not in ("scm", "did"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")


def default_estimators() -> tuple:
    """The benchmark set: DiD, separate, pooled, and heuristic pooling."""
    return (
        EstimatorSpec(name="did", kind="did"),
        EstimatorSpec(name="scm_separate", nu=0.0, intercept=True),
        EstimatorSpec(name="scm_pooled", nu=1.0, intercept=True),
        EstimatorSpec(name="scm_heuristic", nu=None, intercept=True),
    )


@dataclass(frozen=True)
class McReport:
    """Aggregated Monte Carlo metrics for one estimator (sharp-null truth)."""

    estimator: str
    replications: int
    mad_att: float
    bias_att: float
    rmse_att: float
    mad_unit: float
    rmse_unit: float
    seed: int
    coverage_k: tuple | None = None
    mean_nu: float | None = None
    redraws: int = 0

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "replications": self.replications,
            "mad_att": self.mad_att,
            "bias_att": self.bias_att,
            "rmse_att": self.rmse_att,
            "mad_unit": self.mad_unit,
            "rmse_unit": self.rmse_unit,
            "coverage_k": None if self.coverage_k is None
            else list(self.coverage_k),
            "mean_nu": self.mean_nu,
            "seed": self.seed,
            "redraws": self.redraws,
        }


def draw_replicate(dgp: DgpSpec, sel: SelectionSpec, seed, rep: int,
                   K: int | None, attempts_left: int):
    """Generate and assign until the draw supports the requested analysis."""
    used = 0
    while attempts_left > 0:
        seeds = np.random.SeedSequence([seed, rep, used]).spawn(2)
        attempts_left -= 1
        used += 1
        draw = generate_draw(dgp, seeds[0])
        try:
            panel = assign_treatment(draw.panel, sel, seeds[1],
                                     scores=draw.unit_scores)
            if panel.n_treated == 0:
                continue
            cfg = default_config(panel, K=K)
            donor_sets(panel, cfg)
        except (AllTreatedError, StagsynthError, ValueError):
            continue
        return replace(draw, panel=panel), cfg, used
    raise RuntimeError("replicate redraw budget exhausted")


def run_monte_carlo(dgp: DgpSpec, sel: SelectionSpec | None = None,
                    estimators=None, reps: int = 200, seed: int = 0,
                    K: int | None = 9, B: int = 1000,
                    alpha_level: float = 0.05, coverage_max_k: int = 9,
                    base_options: SolveOptions | None = None):
    """Run the calibrated Monte Carlo study under the sharp null.

    Returns ``(reports, rows)``: one :class:`McReport` per estimator and the
    per-replicate records the aggregates are computed from. Replicates whose
    draw cannot support the analysis (nobody treated, empty donor pools) are
    redrawn, up to ten times the requested replications in total.
    """
    sel = sel if sel is not None else default_selection(dgp.kind)
    estimators = tuple(estimators) if estimators is not None \
        else default_estimators()
    names = [e.name for e in estimators]
    if len(set(names)) != len(names):
        raise ValueError("estimator names must be unique")
    rows = []
    total_redraws = 0
    budget = 10 * reps
    for rep in range(reps):
        draw, cfg, used = draw_replicate(dgp, sel, seed, rep, K, budget)
        budget -= used
        total_redraws += used - 1
        panel = draw.panel
        donors = donor_sets(panel, cfg)
        # the sharp null keeps observed outcomes equal to the untreated draw
        assert np.array_equal(panel.outcomes, draw.panel.outcomes)
        norm_cache = {}
        boot_seed = int(np.random.SeedSequence([seed, rep, 7]).generate_state(1)[0])
        for spec in estimators:
            row = {"rep": rep, "estimator": spec.name,
                   "n_treated": panel.n_treated, "att_true": 0.0}
            fit, nu_used = _fit_estimator(panel, cfg, donors, spec,
                                          base_options, norm_cache)
            est = estimate_effects(panel, cfg, fit)
            row["nu"] = nu_used
            row["att_hat"] = est.att
            row["unit_mad"] = float(np.mean(np.abs(est.per_unit_post_avg)))
            row["unit_rmse"] = float(
                np.sqrt(np.mean(est.per_unit_post_avg ** 2)))
            row["converged"] = bool(fit.converged)
            if spec.inference:
                kmax = min(coverage_max_k, cfg.K)
                for k in range(kmax + 1):
                    ci = wild_bootstrap_ci(panel, cfg, fit, k, B=B,
                                           alpha_level=alpha_level,
                                           seed=boot_seed + k)
                    row[f"cover_{k}"] = bool(ci.ci_lower <= 0.0 <= ci.ci_upper)
            rows.append(row)
    reports = {}
    for spec in estimators:
        sub = [r for r in rows if r["estimator"] == spec.name]
        reports[spec.name] = summarize_rows(spec.name, sub, seed,
                                            redraws=total_redraws)
    return reports, rows


def _fit_estimator(panel, cfg, donors, spec: EstimatorSpec, base_options,
                   norm_cache):
    if spec.kind == "did":
        fit = uniform_fit(panel, cfg, donors, intercept=spec.intercept)
        return fit, None
    opts = base_options if base_options is not None else spec.options
    opts = resolve_options(panel, cfg, opts)
    opts = replace_options(opts, intercept=spec.intercept, nu=spec.nu)
    key = (spec.intercept, opts.xi, opts.lam)
    if key not in norm_cache:
        norm_cache[key] = _balance.normalizers(
            panel, cfg, intercept=spec.intercept, xi=opts.xi, donors=donors,
            options=opts)
    norms = norm_cache[key]
    if opts.nu is None:
        nu = heuristic_from_separate_fit(norms.separate_fit, panel, cfg)
        opts = replace_options(opts, nu=nu)
    fit = solve(panel, cfg, donors, opts, norms=norms,
                init=norms.separate_fit.weights.gamma)
    return fit, float(opts.nu)


def summarize_rows(name: str, rows, seed: int, redraws: int = 0) -> McReport:
    """Aggregate per-replicate records into an :class:`McReport`."""
    att = np.array([r["att_hat"] for r in rows])
    unit_mad = np.array([r["unit_mad"] for r in rows])
    unit_rmse = np.array([r["unit_rmse"] for r in rows])
    cover_cols = sorted(
        {c for r in rows for c in r if c.startswith("cover_")},
        key=lambda c: int(c.split("_")[1]))
    coverage = None
    if cover_cols:
        coverage = tuple(
            float(np.mean([r[c] for r in rows if c in r])) for c in cover_cols)
    nus = [r["nu"] for r in rows if r.get("nu") is not None]
    return McReport(
        estimator=name,
        replications=len(rows),
        mad_att=float(np.mean(np.abs(att))),
        bias_att=float(np.mean(att)),
        rmse_att=float(np.sqrt(np.mean(att ** 2))),
        mad_unit=float(np.mean(unit_mad)),
        rmse_unit=float(np.sqrt(np.mean(unit_rmse ** 2))),
        seed=seed,
        coverage_k=coverage,
        mean_nu=float(np.mean(nus)) if nus else None,
        redraws=redraws,
    )


# ---------------------------------------------------------------------------
# calibration


def calibrate(panel: PanelData, kind: str) -> DgpSpec:
    """Estimate generating-process parameters from never-treated observations."""
    nn = panel.outcomes[panel.never_treated]
    n0, t = nn.shape
    if kind == "twfe":
        if n0 < 2 or t < 2:
            raise InsufficientDataError("two-way calibration needs at least a "
                                        "2x2 never-treated block")
        grand, unit_fx, time_fx, resid = _two_way_fit(nn)
        dof = max((n0 - 1) * (t - 1), 1)
        sigma = math.sqrt(float((resid ** 2).sum()) / dof)
        return DgpSpec(kind="twfe", N=panel.n_units, T=panel.n_times,
                       intercept=float(grand),
                       unit_cov=np.array([[np.var(unit_fx, ddof=1)]])
                       if n0 > 1 else np.array([[0.0]]),
                       time_effects=time_fx, noise_sd=sigma)
    if kind == "factor":
        if n0 < 4 or t < 4:
            raise InsufficientDataError("factor calibration needs at least a "
                                        "4x4 never-treated block")
        grand, unit_fx, time_fx, resid = _two_way_fit(nn)
        u, s, vt = np.linalg.svd(resid, full_matrices=False)
        loadings = u[:, :2] * np.sqrt(s[:2])
        factors = vt[:2].T * np.sqrt(s[:2])
        resid2 = resid - loadings @ factors.T
        dof = max((n0 - 1) * (t - 1) - 2 * (n0 + t), 1)
        sigma = math.sqrt(float((resid2 ** 2).sum()) / dof)
        latent = np.column_stack([unit_fx, loadings])
        return DgpSpec(kind="factor", N=panel.n_units, T=panel.n_times,
                       intercept=float(grand),
                       unit_cov=np.cov(latent, rowvar=False, ddof=1),
                       time_effects=time_fx, factor_values=factors,
                       noise_sd=sigma)
    if kind == "ar":
        if t < 8 or n0 < 2:
            raise InsufficientDataError("AR calibration needs never-treated "
                                        "series of length at least 8")
        coefs = np.empty((n0, 3))
        samp_var = np.empty((n0, 3))
        resid_ss, resid_n = 0.0, 0
        for i in range(n0):
            ylag = np.column_stack([nn[i, 2:-1], nn[i, 1:-2], nn[i, :-3]])
            design = np.column_stack([np.ones(len(ylag)), ylag])
            target = nn[i, 3:]
            beta, res, *_ = np.linalg.lstsq(design, target, rcond=None)
            coefs[i] = beta[1:]
            fitted = design @ beta
            r = target - fitted
            dof = max(len(target) - 4, 1)
            s2 = float(r @ r) / dof
            resid_ss += float(r @ r)
            resid_n += dof
            xtx_inv = np.linalg.pinv(design.T @ design)
            samp_var[i] = s2 * np.diag(xtx_inv)[1:]
        mu = coefs.mean(axis=0)
        between = np.clip(np.var(coefs, axis=0, ddof=1) - samp_var.mean(axis=0),
                          0.0, None)
        return DgpSpec(kind="ar", N=panel.n_units, T=panel.n_times,
                       ar_coefs_mean=tuple(mu),
                       ar_coefs_sd=float(np.sqrt(between.mean())),
                       noise_sd=math.sqrt(resid_ss / max(resid_n, 1)))
    raise ValueError(f"unknown dgp kind {kind!r}")


def _two_way_fit(y: np.ndarray):
    grand = y.mean()
    unit_fx = y.mean(axis=1) - grand
    time_fx = y.mean(axis=0) - grand
    resid = y - grand - unit_fx[:, None] - time_fx[None, :]
    return grand, unit_fx, time_fx, resid
