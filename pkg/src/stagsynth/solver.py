"""Partially pooled synthetic control weights via accelerated projected gradient.

The solver minimizes a convex combination of the normalized pooled and
unit-level squared imbalances plus a small ridge penalty, over the product of
donor simplices. Accelerated projected gradient descent with per-column exact
simplex projection and restart on non-monotone steps drives the iterates; an
exact active-set polish refines the final point. With a positive ridge the
objective is strictly convex, so the output is reproducible from any start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as _dc_replace

import numpy as np

from . import balance as _balance
from ._problem import Block, Problem
from .errors import NoCovariatesError, RegimeUnsupportedError
from .panel import (DonorSets, EventConfig, PanelData, active_lags,
                    active_treated, default_config, donor_sets)


@dataclass(frozen=True)
class SolveOptions:
    """Hyperparameters of the weighting problem.

    ``nu`` blends the pooled (1) and unit-level (0) objectives; ``None``
    requests the data-driven heuristic at the pipeline level. ``lam`` is the
    ridge penalty and ``xi`` the covariate weight; ``None`` selects the
    scale-aware defaults. ``intercept`` fits per-unit level shifts (profiled
    out by residualizing each lag window). ``cohort_mode`` fully pools units
    sharing an adoption time.
    """

    nu: float | None = None
    lam: float | None = None
    xi: float | None = None
    intercept: bool = False
    cohort_mode: bool = False
    tol: float = 1e-10
    max_iter: int = 10_000
    polish: bool = True

    def __post_init__(self):
        if self.nu is not None and not (0.0 <= self.nu <= 1.0):
            raise ValueError("nu must lie in [0, 1]")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.xi is not None and self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")


def replace_options(options: SolveOptions, **kw) -> SolveOptions:
    return _dc_replace(options, **kw)


@dataclass(frozen=True)
class CohortView:
    """Treatment cohorts: units sharing an adoption time, summed outcomes."""

    positions: tuple          # treatment position per cohort, increasing
    members: tuple            # tuple of index arrays into panel units
    sizes: np.ndarray         # n_g per cohort
    outcomes: np.ndarray      # (G, T) cohort-summed treated outcomes
    lags: np.ndarray          # lag window per cohort

    @property
    def n_cohorts(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class DualSolution:
    """Dual variables recovered from the primal KKT conditions.

    ``beta[:, j]`` prices treated unit j's lag constraints and ``mu_beta`` the
    pooled ones; with full pooling (nu = 1) every ``beta_j`` equals
    ``mu_beta``, with no pooling (nu = 0) ``mu_beta`` vanishes and each
    ``beta_j`` is shrunk toward zero. ``gap`` is the primal-dual objective
    difference at the recovered point.
    """

    alpha_dual: np.ndarray
    beta: np.ndarray
    mu_beta: np.ndarray
    gap: float


@dataclass(frozen=True)
class FitResult:
    """Solved weights with achieved imbalances and solve diagnostics."""

    weights: _balance.WeightMatrix
    intercepts: np.ndarray | None
    balance: _balance.BalanceReport
    options: SolveOptions
    objective: float
    iterations: int
    converged: bool
    frobenius_norm: float
    treated_units: tuple
    donors: DonorSets
    cohorts: CohortView | None = None
    cohort_balance: _balance.BalanceReport | None = None
    cohort_weights: np.ndarray | None = None
    objective_trace: np.ndarray | None = None

    def to_dict(self, unit_ids=None, weight_floor: float = 1e-10) -> dict:
        g = self.weights.gamma
        triplets = []
        for j, label in enumerate(self.treated_units):
            for i in np.flatnonzero(g[:, j] >= weight_floor):
                donor = unit_ids[i] if unit_ids is not None else int(i)
                triplets.append({"treated_unit": label, "donor_unit": donor,
                                 "weight": float(g[i, j])})
        opts = self.options
        return {
            "weights": triplets,
            "intercepts": (None if self.intercepts is None
                           else [float(a) for a in self.intercepts]),
            "treated_units": list(self.treated_units),
            "hyperparameters": {"nu": opts.nu, "lambda": opts.lam,
                                "xi": opts.xi, "intercept": opts.intercept,
                                "cohort_mode": opts.cohort_mode},
            "balance": self.balance.to_dict(),
            "objective": _json_float(self.objective),
            "iterations": self.iterations,
            "converged": self.converged,
            "frobenius_norm": self.frobenius_norm,
        }


def _json_float(x):
    return None if (x is None or not np.isfinite(x)) else float(x)


# ---------------------------------------------------------------------------
# defaults


def default_lambda(panel: PanelData, cfg: EventConfig) -> float:
    """Scale-aware ridge default: 1e-6 times the mean squared demeaned
    pre-treatment outcome across lag windows."""
    treated = active_treated(panel, cfg)
    lags = active_lags(panel, cfg)
    total, count = 0.0, 0
    for j, u in enumerate(treated):
        p = int(panel.treat_time[u])
        window = panel.outcomes[:, p - int(lags[j]):p]
        resid = window - window.mean(axis=1, keepdims=True)
        total += float((resid ** 2).sum())
        count += resid.size
    msq = total / max(count, 1)
    return max(1e-6 * msq, 1e-12)


def default_xi(panel: PanelData, cfg: EventConfig) -> float:
    """Covariate weight default: sample variance of pre-adoption outcomes of
    never-treated units (zero when the panel has no covariates)."""
    if panel.covariates is None:
        return 0.0
    treated = active_treated(panel, cfg)
    last = int(panel.treat_time[treated].max())
    cells = panel.outcomes[panel.never_treated][:, :last]
    if cells.size < 2:
        return 1.0
    return float(np.var(cells, ddof=1))


def resolve_options(panel: PanelData, cfg: EventConfig,
                    options: SolveOptions | None) -> SolveOptions:
    opts = options if options is not None else SolveOptions()
    lam = opts.lam if opts.lam is not None else default_lambda(panel, cfg)
    xi = opts.xi if opts.xi is not None else default_xi(panel, cfg)
    if xi > 0 and panel.covariates is None:
        raise NoCovariatesError("xi > 0 requires a panel with covariates")
    return replace_options(opts, lam=lam, xi=xi)


# ---------------------------------------------------------------------------
# feasible-set primitives


def project_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = total}``.

    Sort-and-threshold: with the entries sorted in decreasing order, the
    projection subtracts the largest uniform shift that keeps the surviving
    entries positive and clips the rest to zero.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("v must be a nonempty vector")
    if total <= 0:
        raise ValueError("total must be positive")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u + (total - css) / k > 0)[-1]
    theta = (css[rho] - total) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def intercept_closed_form(panel: PanelData, cfg: EventConfig, j: int,
                          gamma_j) -> float:
    """Average pre-treatment gap between treated unit ``j`` and its synthetic
    control; the optimal intercept for any fixed weights."""
    treated = active_treated(panel, cfg)
    lags = active_lags(panel, cfg)
    u = treated[j]
    p = int(panel.treat_time[u])
    window = panel.outcomes[:, p - int(lags[j]):p]
    means = window.mean(axis=1)
    g = np.asarray(gamma_j, dtype=float)
    return float(means[u] - g @ means)


# ---------------------------------------------------------------------------
# cohorts


def cohort_transform(panel: PanelData, cfg: EventConfig) -> CohortView:
    """Group treated units into adoption-time cohorts with summed outcomes.

    Cohort ``g`` is treated at time ``T(g)`` with ``n_g`` members; its
    outcome series is the member sum, its donor pool the units untreated
    ``K`` periods past ``T(g)``, and its weights sum to ``n_g``.
    """
    treated = active_treated(panel, cfg)
    lags = active_lags(panel, cfg)
    pos = panel.treat_time[treated].astype(int)
    positions, members, sizes, outs, cohort_lags = [], [], [], [], []
    for p in np.unique(pos):
        mask = pos == p
        idx = treated[mask]
        positions.append(int(p))
        members.append(idx)
        sizes.append(len(idx))
        outs.append(panel.outcomes[idx].sum(axis=0))
        cohort_lags.append(int(lags[mask].max()))
    return CohortView(positions=tuple(positions), members=tuple(members),
                      sizes=np.array(sizes), outcomes=np.array(outs),
                      lags=np.array(cohort_lags))


# ---------------------------------------------------------------------------
# problem assembly


def _unit_blocks(panel, cfg, donors, options):
    treated = active_treated(panel, cfg)
    lags = active_lags(panel, cfg)
    y = panel.outcomes
    blocks = []
    for j, u in enumerate(treated):
        p = int(panel.treat_time[u])
        lj = int(lags[j])
        cols = p - 1 - np.arange(lj)
        pool = donors[j]
        b = y[u, cols].copy()
        A = y[pool][:, cols].T.copy()
        if options.intercept:
            window = y[:, p - lj:p]
            means = window.mean(axis=1)
            b -= means[u]
            A -= means[pool]
        X = x = None
        if options.xi > 0 and panel.covariates is not None:
            X = panel.covariates[pool].T.copy()
            x = panel.covariates[u].copy()
        blocks.append(Block(label=panel.unit_ids[u], pos=p, lag=lj,
                            donors=pool, total=1.0, A=A, b=b, X=X, x=x))
    return blocks


def _cohort_blocks(panel, cfg, options):
    from .errors import NoDonorsError

    view = cohort_transform(panel, cfg)
    y = panel.outcomes
    blocks = []
    for g in range(view.n_cohorts):
        p = view.positions[g]
        lg = int(view.lags[g])
        cols = p - 1 - np.arange(lg)
        pool = np.flatnonzero(panel.treat_time > p + cfg.K)
        if len(pool) == 0:
            raise NoDonorsError(
                f"cohort treated at position {p} has an empty donor pool")
        b = view.outcomes[g, cols].copy()
        A = y[pool][:, cols].T.copy()
        if options.intercept:
            b -= view.outcomes[g, p - lg:p].mean()
            A -= y[pool][:, p - lg:p].mean(axis=1)
        X = x = None
        if options.xi > 0 and panel.covariates is not None:
            X = panel.covariates[pool].T.copy()
            x = panel.covariates[view.members[g]].sum(axis=0)
        blocks.append(Block(label=f"cohort@{panel.times[p]}", pos=p, lag=lg,
                            donors=pool, total=float(view.sizes[g]),
                            A=A, b=b, X=X, x=x))
    return view, blocks


def build_problem(panel: PanelData, cfg: EventConfig, donors, options,
                  norm_constants=(1.0, 1.0)):
    if options.cohort_mode:
        view, blocks = _cohort_blocks(panel, cfg, options)
    else:
        view = None
        blocks = _unit_blocks(panel, cfg, donors, options)
    prob = Problem(blocks, nu=options.nu, lam=options.lam, xi=options.xi,
                   c_sep=norm_constants[0], c_pool=norm_constants[1])
    return prob, view


# ---------------------------------------------------------------------------
# optimization loop


def _fista(problem: Problem, w0, tol, max_iter, use_polish=True,
           polish_every=150):
    step = 1.0 / problem.lipschitz()
    w = np.asarray(w0, dtype=float)
    f_w = problem.objective(w)
    y = w.copy()
    t = 1.0
    trace = [f_w]
    consec = 0
    it = 0
    # the exact active-set refinement is worthwhile until the dense solve
    # would dominate; beyond that let the first-order iterations thin the
    # support first
    polish_budget = max(8 * problem.J, 200, min(problem.n, 1000))
    for it in range(1, max_iter + 1):
        w_new = problem.project(y - step * problem.grad(y))
        f_new = problem.objective(w_new)
        if f_new > f_w:
            # momentum overshoot: restart from the last monotone point
            t = 1.0
            w_new = problem.project(w - step * problem.grad(w))
            f_new = problem.objective(w_new)
            while f_new > f_w and step > 1e-20:
                step *= 0.5
                w_new = problem.project(w - step * problem.grad(w))
                f_new = problem.objective(w_new)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_next) * (w_new - w)
        rel = (f_w - f_new) / max(abs(f_w), 1e-300)
        w, f_w, t = w_new, f_new, t_next
        trace.append(f_w)
        small = 0.0 <= rel < tol
        consec = consec + 1 if small else 0
        try_polish = use_polish and (
            it % polish_every == 0 or consec >= 3) and (
            int((w > 0).sum()) <= polish_budget)
        if try_polish:
            rounds = 60 if consec >= 3 else 12
            w_p, f_p, settled = problem.polish(w, f_w, max_rounds=rounds)
            if settled:
                # adopt the exact face minimizer; its true objective cannot
                # exceed the iterate's, evaluation noise aside
                if f_p <= f_w * (1.0 + 1e-12) + 1e-300:
                    w, f_w = w_p, min(f_p, f_w)
                    trace.append(f_w)
                return w, f_w, it, True, np.asarray(trace)
            if f_p < f_w:
                w, f_w = w_p, f_p
                trace.append(f_w)
                y, t = w.copy(), 1.0
        if consec >= 3:
            return w, f_w, it, True, np.asarray(trace)
    return w, f_w, it, False, np.asarray(trace)


def _run(panel, cfg, donors, options, norm_constants, init=None):
    problem, view = build_problem(panel, cfg, donors, options, norm_constants)
    w0 = problem.uniform() if init is None else problem.project(
        problem.compress(init))
    w, f, iters, converged, trace = _fista(problem, w0, options.tol,
                                           options.max_iter,
                                           use_polish=options.polish)
    if options.polish and not converged:
        w, f, _ = problem.polish(w, f)
    return problem, view, w, f, iters, converged, trace


def _finalize(panel, cfg, donors, options, norm_constants, degenerate,
              problem, view, w, f, iters, converged, trace):
    treated = active_treated(panel, cfg)
    n = panel.n_units
    if view is None:
        gamma = problem.expand(w, n)
        cohort_weights = None
        cohort_report = None
        frob = float(np.linalg.norm(gamma))
    else:
        cohort_weights = problem.expand(w, n)
        gamma = np.zeros((n, len(treated)))
        treated_pos = {u: j for j, u in enumerate(treated)}
        for g in range(view.n_cohorts):
            share = cohort_weights[:, g] / view.sizes[g]
            for u in view.members[g]:
                gamma[:, treated_pos[u]] = share
        terms = problem.balance_terms(w)
        cohort_report = _balance.BalanceReport(
            q_sep=terms["q_sep"], q_pool=terms["q_pool"],
            q_sep_norm=terms["q_sep"] / norm_constants[0],
            q_pool_norm=terms["q_pool"] / norm_constants[1],
            per_unit_q=terms["per_unit_q"], norm_constants=norm_constants,
            q_sep_X=terms.get("q_sep_X"), q_pool_X=terms.get("q_pool_X"),
            degenerate_norms=degenerate)
        frob = float(np.linalg.norm(cohort_weights))
    alpha = None
    if options.intercept:
        alpha = np.array([
            intercept_closed_form(panel, cfg, j, gamma[:, j])
            for j in range(len(treated))])
    report = _balance.balance_report(
        panel, cfg, gamma, alpha, norm_constants=norm_constants,
        xi=options.xi, degenerate=degenerate)
    return FitResult(
        weights=_balance.WeightMatrix(gamma),
        intercepts=alpha,
        balance=report,
        options=options,
        objective=f,
        iterations=iters,
        converged=converged,
        frobenius_norm=frob,
        treated_units=tuple(panel.unit_ids[u] for u in treated),
        donors=donors,
        cohorts=view,
        cohort_balance=cohort_report,
        cohort_weights=cohort_weights,
        objective_trace=trace,
    )


def solve_separate(panel: PanelData, cfg: EventConfig | None = None,
                   donors: DonorSets | None = None,
                   options: SolveOptions | None = None) -> FitResult:
    """Solve the separate (nu = 0) problem with unnormalized imbalances.

    This is the problem whose solution defines the normalization constants;
    with nu = 0 it decomposes into independent single-unit fits.
    """
    cfg = cfg if cfg is not None else default_config(panel)
    options = resolve_options(panel, cfg, options)
    options = replace_options(options, nu=0.0)
    if donors is None:
        donors = donor_sets(panel, cfg)
    out = _run(panel, cfg, donors, options, (1.0, 1.0))
    return _finalize(panel, cfg, donors, options, (1.0, 1.0), (False, False),
                     *out)


def solve(panel: PanelData, cfg: EventConfig | None = None,
          donors: DonorSets | None = None,
          options: SolveOptions | None = None,
          norms: _balance.Normalizers | None = None,
          init=None) -> FitResult:
    """Solve the partially pooled weighting problem at a concrete ``nu``.

    Normalization constants are taken from ``norms`` or computed from a fresh
    separate (nu = 0) solve. ``init`` warm-starts the iteration from an
    (N, J) weight matrix; with a positive ridge the optimum is unique, so the
    start affects speed only.
    """
    cfg = cfg if cfg is not None else default_config(panel)
    options = resolve_options(panel, cfg, options)
    if options.nu is None:
        raise ValueError("solve() needs a concrete nu; use fit_panel() for "
                         "the heuristic choice")
    if donors is None:
        donors = donor_sets(panel, cfg)
    if norms is None:
        norms = _balance.normalizers(panel, cfg, intercept=options.intercept,
                                     xi=options.xi, donors=donors,
                                     options=options)
    constants = (norms.C_sep, norms.C_pool)
    out = _run(panel, cfg, donors, options, constants, init=init)
    return _finalize(panel, cfg, donors, options, constants, norms.degenerate,
                     *out)


def fit_panel(panel: PanelData, cfg: EventConfig | None = None,
              options: SolveOptions | None = None,
              donors: DonorSets | None = None,
              norms: _balance.Normalizers | None = None) -> FitResult:
    """Full fitting pipeline: normalizers, pooling-weight choice, solve.

    When ``options.nu`` is ``None`` the data-driven heuristic (ratio of the
    pooled to the average unit-level fit of the separate solution) picks it.
    """
    cfg = cfg if cfg is not None else default_config(panel)
    options = resolve_options(panel, cfg, options)
    if donors is None:
        donors = donor_sets(panel, cfg)
    if norms is None:
        norms = _balance.normalizers(panel, cfg, intercept=options.intercept,
                                     xi=options.xi, donors=donors,
                                     options=options)
    if options.nu is None:
        from .tuning import heuristic_from_separate_fit

        nu = heuristic_from_separate_fit(norms.separate_fit, panel, cfg)
        options = replace_options(options, nu=nu)
    sep = norms.separate_fit
    init = sep.cohort_weights if options.cohort_mode else sep.weights.gamma
    return solve(panel, cfg, donors, options, norms=norms, init=init)


def uniform_fit(panel: PanelData, cfg: EventConfig | None = None,
                donors: DonorSets | None = None,
                intercept: bool = True) -> FitResult:
    """Uniform donor weights (the weighted difference-in-differences baseline)."""
    cfg = cfg if cfg is not None else default_config(panel)
    if donors is None:
        donors = donor_sets(panel, cfg)
    treated = active_treated(panel, cfg)
    gamma = np.zeros((panel.n_units, len(treated)))
    for j, pool in enumerate(donors):
        gamma[pool, j] = 1.0 / len(pool)
    alpha = None
    if intercept:
        alpha = np.array([
            intercept_closed_form(panel, cfg, j, gamma[:, j])
            for j in range(len(treated))])
    options = SolveOptions(nu=0.0, lam=0.0, xi=0.0, intercept=intercept)
    report = _balance.balance_report(panel, cfg, gamma, alpha)
    return FitResult(
        weights=_balance.WeightMatrix(gamma), intercepts=alpha,
        balance=report, options=options, objective=math.nan, iterations=0,
        converged=True, frobenius_norm=float(np.linalg.norm(gamma)),
        treated_units=tuple(panel.unit_ids[u] for u in treated),
        donors=donors)


# ---------------------------------------------------------------------------
# dual recovery (correctness oracle)


def dual_check(panel: PanelData, cfg: EventConfig, fit: FitResult):
    """Recover dual variables from the primal KKT conditions and verify them.

    In the regime with a positive ridge, equal lag windows, and no
    covariates, the optimal weights equal the positive part of an affine
    score in the lag outcomes: ``gamma_ij = [alpha_j + beta_j . Y_i]_+``.
    Returns the recovered :class:`DualSolution` (including the primal-dual
    objective gap) and the largest deviation between the fitted weights and
    the weights implied by the recovered duals.
    """
    opts = fit.options
    if opts.cohort_mode:
        raise RegimeUnsupportedError("dual recovery supports unit-level fits only")
    if opts.lam is None or opts.lam <= 0:
        raise RegimeUnsupportedError("dual recovery requires a positive ridge")
    if opts.xi and opts.xi > 0:
        raise RegimeUnsupportedError("dual recovery requires no covariate terms")
    lags = active_lags(panel, cfg)
    if len(np.unique(lags)) != 1:
        raise RegimeUnsupportedError("dual recovery requires equal lag windows")
    L = int(lags[0])
    J = len(lags)
    c_sep, c_pool = fit.balance.norm_constants
    nu, lam = opts.nu, opts.lam
    a_coef = nu / c_pool ** 2
    b_coef = (1.0 - nu) / c_sep ** 2

    donors = fit.donors
    problem, _ = build_problem(panel, cfg, donors, opts, (c_sep, c_pool))
    w = problem.compress(fit.weights.gamma)
    resid = problem.lag_residuals(w)          # e_{j ell}, lag 1 first
    e = np.stack(resid, axis=1)               # (L, J)
    e_bar = e.mean(axis=1)
    mu_beta = a_coef * e_bar / (lam * L * J)
    beta = mu_beta[:, None] + b_coef * e / (lam * L * J)

    alpha = np.zeros(J)
    max_violation = 0.0
    for j, blk in enumerate(problem.blocks):
        s = problem.starts[j]
        gam = w[s:s + problem.sizes[j]]
        scores = blk.A.T @ beta[:, j]         # beta_j . Y_i per donor
        # weight the constant's estimate by the weights themselves so that
        # numerically tiny actives cannot pollute it
        alpha[j] = float(gam @ (gam - scores) / gam.sum())
        implied = np.maximum(alpha[j] + scores, 0.0)
        max_violation = max(max_violation, float(np.max(np.abs(gam - implied))))

    # primal and dual objective values at the recovered point
    terms = problem.balance_terms(w)
    primal = (a_coef * terms["q_pool"] ** 2 + b_coef * terms["q_sep"] ** 2
              + lam * float(w @ w))
    lin = 0.0
    quad = 0.0
    for j, blk in enumerate(problem.blocks):
        lin += alpha[j] + float(beta[:, j] @ blk.b)
        implied = np.maximum(alpha[j] + blk.A.T @ beta[:, j], 0.0)
        quad += float(implied @ implied)
    pen = 0.0
    if a_coef > 0:
        pen += (lam ** 2) * L * J * (J / a_coef) * float(mu_beta @ mu_beta)
    if b_coef > 0:
        diff = beta - mu_beta[:, None]
        pen += (lam ** 2) * L * J / b_coef * float((diff * diff).sum())
    dual_val = 2.0 * lam * lin - lam * quad - pen
    gap = float(primal - dual_val)

    return DualSolution(alpha_dual=alpha, beta=beta, mu_beta=mu_beta,
                        gap=gap), max_violation
