"""Internal stacked representation of the partially pooled weighting program.

The objective over the product of donor simplices is

    nu * (q_pool^2 + xi * q_pool_X^2) / C_pool^2
    + (1 - nu) * (q_sep^2 + xi * q_sep_X^2) / C_sep^2
    + lam * ||Gamma||_F^2

which is a convex quadratic in the stacked weight vector. Each treated unit
(or cohort) contributes a block of lag rows (and optional covariate rows) to
a block-diagonal design matrix ``M``; a sparse averaging operator ``P``
aligns blocks by lag to form the pooled residual. Everything downstream
(objective, gradient, Hessian products, exact active-set polish) is expressed
through ``M``, ``P`` and two diagonal weight vectors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import sparse


@dataclass
class Block:
    """One treated unit's (or cohort's) slice of the stacked program."""

    label: str
    pos: int                 # treatment position in the time grid
    lag: int                 # lag-window length
    donors: np.ndarray       # donor unit indices
    total: float             # simplex total (1, or cohort size)
    A: np.ndarray            # (lag, n_donors) donor lag outcomes, lag 1 first
    b: np.ndarray            # (lag,) treated lag outcomes
    X: np.ndarray | None     # (d, n_donors) donor covariates
    x: np.ndarray | None     # (d,) treated covariates


class Problem:
    """Stacked quadratic program over a product of simplices."""

    def __init__(self, blocks, nu, lam, xi, c_sep=1.0, c_pool=1.0):
        if not blocks:
            raise ValueError("no treated units in scope")
        self.blocks = list(blocks)
        self.nu = float(nu)
        self.lam = float(lam)
        self.xi = float(xi)
        self.c_sep = float(c_sep)
        self.c_pool = float(c_pool)
        self.J = len(self.blocks)
        self.L = max(b.lag for b in self.blocks)
        self.d = 0 if (xi == 0.0 or self.blocks[0].X is None) else len(self.blocks[0].x)
        self._assemble()

    # -- assembly ---------------------------------------------------------

    def _assemble(self):
        J, L, d, xi = self.J, self.L, self.d, self.xi
        sizes = np.array([len(b.donors) for b in self.blocks])
        self.sizes = sizes
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.n = int(sizes.sum())
        self.totals = np.array([b.total for b in self.blocks])

        rows = []
        targets = []
        w_sep = []
        p_rows, p_cols, p_vals = [], [], []
        row0 = 0
        for j, blk in enumerate(self.blocks):
            lj = blk.lag
            block_rows = blk.A if d == 0 else np.vstack([blk.A, blk.X])
            rows.append((j, row0, block_rows))
            targets.append(blk.b if d == 0 else np.concatenate([blk.b, blk.x]))
            w_sep.append(np.concatenate([
                np.full(lj, 1.0 / (J * lj)),
                np.full(d, xi / J) if d else np.empty(0),
            ]))
            # pooled alignment: lag ell of block j feeds pooled lag row ell
            p_rows.extend(range(lj))
            p_cols.extend(range(row0, row0 + lj))
            p_vals.extend([1.0 / J] * lj)
            if d:
                p_rows.extend(range(L, L + d))
                p_cols.extend(range(row0 + lj, row0 + lj + d))
                p_vals.extend([1.0 / J] * d)
            row0 += lj + d

        self.R = row0
        data, indices, indptr = [], [], [0]
        # CSR by hand: block j occupies columns starts[j]..starts[j]+n_j
        for j, r0, block_rows in rows:
            c0, nj = self.starts[j], sizes[j]
            for r in range(block_rows.shape[0]):
                data.append(block_rows[r])
                indices.append(np.arange(c0, c0 + nj))
            indptr.extend(indptr[-1] + nj * (np.arange(block_rows.shape[0]) + 1))
        self.M = sparse.csr_matrix(
            (np.concatenate(data), np.concatenate(indices), np.array(indptr)),
            shape=(self.R, self.n))
        self.Mt = self.M.T.tocsr()
        self.c = np.concatenate(targets)
        self.w_sep = np.concatenate(w_sep)
        self.P = sparse.csr_matrix(
            (p_vals, (p_rows, p_cols)), shape=(L + d, self.R))
        self.Pt = self.P.T.tocsr()
        self.w_pool = np.concatenate([np.full(L, 1.0 / L),
                                      np.full(d, xi) if d else np.empty(0)])
        self.s_coef = (1.0 - self.nu) / self.c_sep ** 2
        self.p_coef = self.nu / self.c_pool ** 2
        self._lip = None
        self._quad = None

        # row bookkeeping for balance terms
        kind = np.empty(self.R, dtype=int)  # block index
        is_cov = np.zeros(self.R, dtype=bool)
        r0 = 0
        for j, blk in enumerate(self.blocks):
            kind[r0:r0 + blk.lag + d] = j
            if d:
                is_cov[r0 + blk.lag:r0 + blk.lag + d] = True
            r0 += blk.lag + d
        self.row_block = kind
        self.row_is_cov = is_cov

        # padding scatter for the vectorized multi-simplex projection
        nmax = sizes.max()
        self._pad_shape = (self.J, int(nmax))
        cols = np.concatenate([np.arange(nj) for nj in sizes])
        rows_ = np.repeat(np.arange(self.J), sizes)
        self._pad_rows, self._pad_cols = rows_, cols

    # -- evaluation -------------------------------------------------------

    def residual(self, w):
        return self.c - self.M @ w

    def objective(self, w):
        r = self.residual(w)
        val = self.s_coef * float((self.w_sep * r) @ r)
        pr = self.P @ r
        val += self.p_coef * float((self.w_pool * pr) @ pr)
        return val + self.lam * float(w @ w)

    def grad(self, w):
        r = self.residual(w)
        u = self.s_coef * (self.w_sep * r)
        u += self.Pt @ (self.p_coef * (self.w_pool * (self.P @ r)))
        return -2.0 * (self.Mt @ u) + 2.0 * self.lam * w

    def hess_vec(self, v):
        mv = self.M @ v
        u = self.s_coef * (self.w_sep * mv)
        u += self.Pt @ (self.p_coef * (self.w_pool * (self.P @ mv)))
        return 2.0 * (self.Mt @ u) + 2.0 * self.lam * v

    def lipschitz(self):
        if self._lip is None:
            v = np.full(self.n, 1.0 / math.sqrt(self.n))
            lam = 1.0
            for _ in range(80):
                hv = self.hess_vec(v)
                lam = float(np.linalg.norm(hv))
                if lam == 0.0:
                    lam = 2.0 * self.lam if self.lam > 0 else 1.0
                    break
                v = hv / lam
            self._lip = 1.05 * lam
        return self._lip

    def balance_terms(self, w):
        """Raw imbalance measures implied by a stacked weight vector."""
        r = self.residual(w)
        lag = ~self.row_is_cov
        e = r[lag]
        blocks_lag = self.row_block[lag]
        lags = np.array([b.lag for b in self.blocks])
        per_unit = np.array([
            math.sqrt(np.mean(e[blocks_lag == j] ** 2)) for j in range(self.J)])
        qs = math.sqrt(np.mean(per_unit ** 2))
        padded = np.zeros((self.J, self.L))
        for j in range(self.J):
            padded[j, :lags[j]] = e[blocks_lag == j]
        qp = math.sqrt(np.mean((padded.sum(axis=0) / self.J) ** 2))
        out = {"q_sep": qs, "q_pool": qp, "per_unit_q": per_unit}
        if self.d:
            g = r[self.row_is_cov].reshape(self.J, self.d)
            out["q_sep_X"] = math.sqrt(np.mean(np.sum(g ** 2, axis=1)))
            out["q_pool_X"] = float(np.linalg.norm(g.mean(axis=0)))
        return out

    def lag_residuals(self, w):
        """Per-block lag residual vectors (lag 1 first)."""
        r = self.residual(w)
        lag = ~self.row_is_cov
        e = r[lag]
        blocks_lag = self.row_block[lag]
        return [e[blocks_lag == j] for j in range(self.J)]

    # -- feasible set -----------------------------------------------------

    def uniform(self):
        return np.concatenate([
            np.full(nj, t / nj) for nj, t in zip(self.sizes, self.totals)])

    def project(self, w):
        """Exact Euclidean projection of every column onto its simplex."""
        pad = np.full(self._pad_shape, -np.inf)
        pad[self._pad_rows, self._pad_cols] = w
        u = -np.sort(-pad, axis=1)
        finite = np.isfinite(u)
        css = np.cumsum(np.where(finite, u, 0.0), axis=1)
        k = np.arange(1, self._pad_shape[1] + 1)
        cond = u + (self.totals[:, None] - css) / k > 0
        rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = (css[np.arange(self.J), rho] - self.totals) / (rho + 1)
        out = np.maximum(w - theta[self._pad_rows], 0.0)
        return out

    def expand(self, w, n_units):
        """Scatter the stacked vector into an (n_units, J) weight matrix."""
        gamma = np.zeros((n_units, self.J))
        for j, blk in enumerate(self.blocks):
            s = self.starts[j]
            gamma[blk.donors, j] = w[s:s + self.sizes[j]]
        return gamma

    def compress(self, gamma):
        """Inverse of :meth:`expand` (off-support weight is dropped)."""
        parts = [np.asarray(gamma)[blk.donors, j]
                 for j, blk in enumerate(self.blocks)]
        return np.concatenate(parts)

    # -- exact refinement --------------------------------------------------

    def quadratic(self):
        """Dense (G, h) with objective ``w'Gw - 2h'w + const``; cached.

        The fit part of G is block diagonal, so the build cost is one small
        product per block plus a low-rank pooled outer product.
        """
        if self._quad is None:
            ds = self.s_coef * self.w_sep
            G = np.zeros((self.n, self.n))
            r0 = 0
            for j, blk in enumerate(self.blocks):
                nrows = blk.lag + self.d
                Mj = self.M[r0:r0 + nrows, self.starts[j]:
                            self.starts[j] + self.sizes[j]].toarray()
                s = self.starts[j]
                G[s:s + self.sizes[j], s:s + self.sizes[j]] = \
                    Mj.T @ (ds[r0:r0 + nrows, None] * Mj)
                r0 += nrows
            PM = (self.P @ self.M).toarray()
            es = self.p_coef * self.w_pool
            if self.p_coef > 0:
                G += PM.T @ (es[:, None] * PM)
            G[np.diag_indices_from(G)] += self.lam
            h = self.Mt @ (ds * self.c) + PM.T @ (es * (self.P @ self.c))
            self._quad = (G, h)
        return self._quad

    def _restricted_solve(self, idx):
        """Equality-constrained QP restricted to the coordinates in ``idx``.

        The per-column sum constraints are eliminated through a difference
        basis of each column's zero-sum subspace, leaving a positive definite
        reduced system; an equilibrated Cholesky solve with iterative
        refinement handles the wide curvature range between the fit term and
        the ridge.
        """
        G_full, h_full = self.quadratic()
        G = G_full[np.ix_(idx, idx)]
        h = h_full[idx]
        m = len(idx)
        col_of = np.repeat(np.arange(self.J), self.sizes)[idx]
        w0 = np.empty(m)
        bases, others = [], []
        for j in range(self.J):
            members = np.flatnonzero(col_of == j)
            w0[members] = self.totals[j] / len(members)
            bases.extend([members[0]] * (len(members) - 1))
            others.extend(members[1:])
        if not bases:
            return w0, col_of
        bases = np.asarray(bases)
        others = np.asarray(others)
        GZ = G[:, bases] - G[:, others]
        Gz = GZ[bases, :] - GZ[others, :]
        r = h - G @ w0
        rz = r[bases] - r[others]
        d = 1.0 / np.sqrt(np.clip(np.diag(Gz), 1e-300, None))
        z = None
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                cho = sla.cho_factor(Gz * d[:, None] * d[None, :],
                                     check_finite=False)
                z = d * sla.cho_solve(cho, d * rz, check_finite=False)
                for _ in range(2):  # refinement: the system is stiff
                    z += d * sla.cho_solve(cho, d * (rz - Gz @ z),
                                           check_finite=False)
            except (np.linalg.LinAlgError, ValueError, sla.LinAlgWarning):
                z = None
        if z is None or not np.isfinite(z).all():
            z, *_ = np.linalg.lstsq(Gz, rz, rcond=None)
        ws = w0.copy()
        np.add.at(ws, bases, z)
        np.subtract.at(ws, others, z)
        return ws, col_of

    def polish(self, w, f, max_rounds: int = 60):
        """Active-set refinement toward the exact KKT point.

        Starting from the iterate's support, repeatedly solve the
        equality-constrained QP, drop negative coordinates when the
        restricted solution leaves the simplex, and add the coordinate whose
        multiplier price is most violated. The objective is strictly convex,
        so this terminates; the result is kept only if it does not increase
        the objective. Returns ``(w, f, settled)`` where ``settled`` means
        the final face priced out as globally optimal.
        """
        col_index = np.repeat(np.arange(self.J), self.sizes)
        active = w > 1e-14 * np.maximum(self.totals[col_index], 1.0)
        if not active.any():
            return w, f, False
        best_w, best_f = w, f
        for _ in range(max_rounds):
            idx = np.flatnonzero(active)
            ws, col_of = self._restricted_solve(idx)
            neg = ws < -1e-12
            if neg.any():
                keep = ~neg
                for j in np.unique(col_of[neg]):
                    in_col = col_of == j
                    if not (keep & in_col).any():  # never empty a column
                        keep[np.flatnonzero(in_col)[np.argmax(ws[in_col])]] = True
                active[idx[~keep]] = False
                continue
            cand = np.zeros_like(w)
            cand[idx] = np.maximum(ws, 0.0)
            cand = self.project(cand)  # restore exact column sums
            f_cand = self.objective(cand)
            if f_cand <= best_f:
                best_w, best_f = cand, f_cand
            # price the inactive coordinates: the face is optimal iff no
            # inactive gradient dips below its column's active multiplier
            g = self.grad(cand)
            scale = max(1.0, float(np.max(np.abs(g))))
            additions = []
            for j in range(self.J):
                js = col_index == j
                a_j = float(np.min(g[js & active]))
                cand_j = js & ~active
                if not cand_j.any():
                    continue
                i = np.flatnonzero(cand_j)[np.argmin(g[cand_j])]
                if a_j - g[i] > 1e-11 * scale:
                    additions.append(i)
            if not additions:
                # settled: this face's exact minimizer is the global optimum
                if f_cand <= f + 1e-12 * max(1.0, abs(f)):
                    return cand, f_cand, True
                return best_w, best_f, False
            active[additions] = True
        return best_w, best_f, False
