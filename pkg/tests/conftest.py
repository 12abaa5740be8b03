"""Shared test fixtures: panel factories and brute-force oracles."""

import itertools

import numpy as np
import pytest

import stagsynth as ss


def make_panel(n, t, treated_pos, seed=0, scale=0.2, covariate_dim=0,
               outcomes=None):
    """Random walk panel with the given 0-based treatment positions."""
    rng = np.random.default_rng(seed)
    if outcomes is None:
        outcomes = (rng.normal(size=(n, t)).cumsum(axis=1) * scale
                    + rng.normal(size=(n, 1)))
    treat = np.full(n, np.inf)
    for i, p in enumerate(treated_pos):
        treat[i] = p
    cov = names = None
    if covariate_dim:
        cov = ss.panel.standardize_covariates(
            rng.normal(size=(n, covariate_dim)))
        names = tuple(f"x_{c}" for c in range(covariate_dim))
    return ss.PanelData(outcomes=outcomes, unit_ids=[f"u{i}" for i in range(n)],
                        times=np.arange(t), treat_time=treat, covariates=cov,
                        covariate_names=names)


def simplex_grid(n_vertices, step):
    """All nonnegative n-vectors with entries on a step grid summing to one."""
    m = round(1.0 / step)
    points = []
    for comb in itertools.combinations(range(m + n_vertices - 1),
                                       n_vertices - 1):
        prev = -1
        parts = []
        for c in comb:
            parts.append(c - prev - 1)
            prev = c
        parts.append(m + n_vertices - 2 - prev)
        points.append([p * step for p in parts])
    return np.asarray(points)


def solver_objective(panel, cfg, fit, gamma=None, alpha=None):
    """Re-evaluate the solver objective through the balance module only."""
    opts = fit.options
    gamma = fit.weights.gamma if gamma is None else gamma
    if alpha is None:
        alpha = fit.intercepts
        if opts.intercept and gamma is not fit.weights.gamma:
            alpha = np.array([
                ss.intercept_closed_form(panel, cfg, j, gamma[:, j])
                for j in range(gamma.shape[1])])
    c_sep, c_pool = fit.balance.norm_constants
    qs = ss.q_sep(panel, cfg, gamma, alpha)
    qp = ss.q_pool(panel, cfg, gamma, alpha)
    val = (opts.nu * (qp / c_pool) ** 2
           + (1.0 - opts.nu) * (qs / c_sep) ** 2)
    if opts.xi and panel.covariates is not None:
        qxs, qxp = ss.q_covariates(panel, gamma, cfg)
        val += opts.nu * opts.xi * (qxp / c_pool) ** 2
        val += (1.0 - opts.nu) * opts.xi * (qxs / c_sep) ** 2
    return val + opts.lam * float(np.sum(gamma ** 2))


@pytest.fixture
def small_panel():
    return make_panel(6, 10, (5, 6), seed=11)
