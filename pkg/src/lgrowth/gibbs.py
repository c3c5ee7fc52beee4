"""Gibbs sampler for the piecewise-linear latent growth model.

Model, for subject i, occasion t and outcome d loading on facet l(d)::

    y*_{d,it} = alpha_d + x_it . gamma_d + c_d * b(age_it) . beta_{i,l(d)} + eps_{d,it}
    eps_it ~ N(0, Sigma_eps),   beta_i ~ N(mu_beta, Sigma_beta)

Count outcomes are observed through the rounding map ``round_count``; missing
cells are imputed from their conditional Gaussian at every sweep so the
parameter updates always see a complete data matrix.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats
from scipy.special import log_ndtr, ndtri_exp

from .config import ModelConfig
from .data import COVARIATE_NAMES, LongitudinalDataset
from .priors import (
    HierIWState,
    HorseshoeState,
    PriorError,
    draw_hier_iw,
    draw_horseshoe,
)
from .spline import basis_matrix

log = logging.getLogger(__name__)

SWEEP = (
    "augment_counts",
    "impute_missing",
    "update_intercepts_collapsed",
    "update_beta_i",
    "update_population",
    "update_outcome_regression",
    "update_loadings",
    "update_sigma_eps",
    "update_shrinkage",
)


class EngineError(RuntimeError):
    """Numerical failure inside a Gibbs update."""

    def __init__(self, message: str, update: str | None = None, iteration: int | None = None):
        self.update = update
        self.iteration = iteration
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if update is not None:
            where.append(update)
        super().__init__(f"{' / '.join(where)}: {message}" if where else message)


# ---------------------------------------------------------------- rounding


def round_count(y_star):
    """Rounding map h: 0 on (-inf, 0], p on (p - 1, p]."""
    y = np.asarray(y_star, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("round_count requires finite input")
    out = np.where(y <= 0, 0.0, np.ceil(y)).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def count_bounds(counts):
    """Latent interval (lower, upper] whose image under h is ``counts``."""
    c = np.asarray(counts, dtype=float)
    lower = np.where(c == 0, -np.inf, c - 1.0)
    return lower, c.copy()


def sample_truncated_normal(mean, sd, lower, upper, rng: np.random.Generator):
    """Inverse-CDF draws from N(mean, sd^2) restricted to (lower, upper].

    Intervals lying in the upper tail are reflected so the CDF is always
    evaluated where it is small, and the inversion runs in log space.
    """
    mean, sd, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mean, sd, lower, upper))
    )
    if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
        raise ValueError("truncated normal requires positive finite sd")
    if np.any(~(upper > lower)):
        raise ValueError("truncation interval is empty")
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_lo = log_ndtr(lo)
    log_hi = log_ndtr(hi)
    ratio = np.exp(log_lo - log_hi)
    u = rng.random(size=mean.shape)
    z = ndtri_exp(log_hi + np.log(ratio + u * (1.0 - ratio)))
    z = np.clip(z, lo, hi)
    z = np.where(flip, -z, z)
    x = mean + sd * z
    # keep the draw inside (lower, upper] despite rounding in mean + sd * z
    x = np.where(x <= lower, np.nextafter(lower, np.inf), x)
    return np.minimum(x, upper)


# ---------------------------------------------------------------- state


@dataclass
class ParameterState:
    beta: np.ndarray  # (n, q), facet blocks of K+1 slopes stacked
    mu_beta: np.ndarray  # (q,)
    sigma_beta: np.ndarray  # (q, q)
    alpha: np.ndarray  # (D,)
    gamma: np.ndarray  # (D, 4)
    loadings: np.ndarray  # (D,)
    sigma_eps: np.ndarray  # (D, D)
    y: np.ndarray  # (N, D) complete data: observed, latent y* or imputed
    hs_mu: HorseshoeState
    hs_gamma: list[HorseshoeState]
    iw_beta: HierIWState
    iw_eps: HierIWState

    def copy(self) -> "ParameterState":
        return ParameterState(
            beta=self.beta.copy(),
            mu_beta=self.mu_beta.copy(),
            sigma_beta=self.sigma_beta.copy(),
            alpha=self.alpha.copy(),
            gamma=self.gamma.copy(),
            loadings=self.loadings.copy(),
            sigma_eps=self.sigma_eps.copy(),
            y=self.y.copy(),
            hs_mu=self.hs_mu.copy(),
            hs_gamma=[h.copy() for h in self.hs_gamma],
            iw_beta=self.iw_beta.copy(),
            iw_eps=self.iw_eps.copy(),
        )


def _chol(mat: np.ndarray, what: str, update: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise EngineError(f"{what} is not positive definite", update) from None


def _mvn(mean: np.ndarray, prec: np.ndarray, rng, update: str) -> np.ndarray:
    """Draw from N(prec^-1 h, prec^-1) given the mean already solved."""
    L = _chol(prec, "posterior precision", update)
    z = rng.standard_normal(mean.shape)
    return mean + np.linalg.solve(L.T, z)


class GibbsModel:
    """Static design quantities for one dataset/config pair plus the
    full-conditional updates. Updates mutate the given state in place and
    return the freshly drawn block."""

    def __init__(self, dataset: LongitudinalDataset, config: ModelConfig):
        if [o.index for o in dataset.outcomes] != [o.index for o in config.outcomes] or any(
            a.kind != b.kind for a, b in zip(dataset.outcomes, config.outcomes)
        ):
            raise ValueError(
                f"dataset has {dataset.D} outcomes {[o.name for o in dataset.outcomes]} but the "
                f"configuration declares {config.D} {[o.name for o in config.outcomes]}"
            )
        if dataset.n_subjects < 2 and "mu_beta" not in config.fixed:
            raise ValueError("at least two subjects are required to learn the population mean")
        self.data = dataset
        self.config = config
        self.knots = config.knot_vector
        self.outcomes = config.outcomes
        self.priors = config.priors
        self.N, self.D = dataset.y.shape
        self.n = dataset.n_subjects
        self.P = self.knots.n_segments
        self.facets = config.facets
        self.L = len(self.facets)
        self.q = self.L * self.P
        self.facet_pos = np.array([self.facets.index(o.facet) for o in self.outcomes])
        self.B = basis_matrix(dataset.age, self.knots)
        self.X = dataset.covariates()
        self.Xt = np.column_stack([np.ones(self.N), self.X])
        self.XtX = self.Xt.T @ self.Xt
        self.subj = np.asarray(dataset.subject)
        order_ok = np.all(np.diff(self.subj) >= 0)
        if not order_ok:
            raise ValueError("dataset rows must be grouped by subject")
        self.starts = np.flatnonzero(np.r_[True, np.diff(self.subj) != 0])
        present = self.subj[self.starts]
        self.present = present
        bb = np.einsum("np,nq->npq", self.B, self.B)
        self.S = np.zeros((self.n, self.P, self.P))
        self.S[present] = np.add.reduceat(bb, self.starts, axis=0)
        self.s = np.zeros((self.n, self.P))
        self.s[present] = np.add.reduceat(self.B, self.starts, axis=0)
        self.S_total = self.S.sum(axis=0)
        self.s_total = self.B.sum(axis=0)
        self.observed = ~np.isnan(dataset.y)
        self.count_cols = np.array([d for d, o in enumerate(self.outcomes) if o.is_count], dtype=int)
        self.count_rows = {d: np.flatnonzero(self.observed[:, d]) for d in self.count_cols}
        self.count_bounds = {
            d: count_bounds(dataset.y[rows, d]) for d, rows in self.count_rows.items()
        }
        self.free_loadings = np.array([d for d, o in enumerate(self.outcomes) if not o.fixed], dtype=int)
        self.loading_prior_mean = np.array([self.priors.loading_mean(o) for o in self.outcomes])
        self.patterns = self._missing_patterns()
        self.fixed = config.fixed

    def _missing_patterns(self):
        """Rows with missing cells, grouped by how many cells are missing so
        the conditional draws can be batched."""
        miss = ~self.observed
        n_miss = miss.sum(axis=1)
        out = []
        for m in range(1, self.D + 1):
            rows = np.flatnonzero(n_miss == m)
            if rows.size:
                idx = np.array([np.flatnonzero(miss[n]) for n in rows])
                out.append((rows, idx))
        return out

    # ------------------------------------------------------------ helpers

    def latent(self, state: ParameterState) -> np.ndarray:
        """(N, L) facet trajectories zeta at each row's age."""
        beta = state.beta[self.subj].reshape(self.N, self.L, self.P)
        return np.einsum("nlp,np->nl", beta, self.B)

    def mean_matrix(self, state: ParameterState, zeta: np.ndarray | None = None) -> np.ndarray:
        zeta = self.latent(state) if zeta is None else zeta
        return (
            state.alpha[None, :]
            + self.X @ state.gamma.T
            + zeta[:, self.facet_pos] * state.loadings[None, :]
        )

    def residual_mean(self, state: ParameterState, subject: int, occasion: int) -> np.ndarray:
        rows = np.flatnonzero(self.subj == subject)
        n = rows[occasion]
        b = self.B[n]
        zeta = np.array([b @ state.beta[subject, l * self.P:(l + 1) * self.P] for l in range(self.L)])
        return state.alpha + state.gamma @ self.X[n] + state.loadings * zeta[self.facet_pos]

    def loading_matrix(self, loadings: np.ndarray) -> np.ndarray:
        A = np.zeros((self.D, self.L))
        A[np.arange(self.D), self.facet_pos] = loadings
        return A

    # ------------------------------------------------------------ init

    def initial_state(self, method: str | None = None) -> ParameterState:
        """Deterministic starting state.

        ``"simple"``: alpha at observed means, free loadings at their prior
        means, beta = 0, Sigma_eps = diag(observed variances).
        ``"anchored"`` (default): each facet's population curve is first fitted
        by least squares to its anchor outcome (loading fixed to one), then
        every other outcome is regressed on that curve for its intercept and
        loading; Sigma_eps starts at the residual variances. This puts the
        latent scale where the anchors put it instead of where the prior
        loading means would.
        """
        method = method or self.config.init
        if method not in ("simple", "anchored"):
            raise ValueError(f"unknown initialisation {method!r}")
        y = self.data.y
        obs_mean = np.array([np.nanmean(y[:, d]) if self.observed[:, d].any() else 0.0
                             for d in range(self.D)])
        obs_var = np.array([np.nanvar(y[:, d]) if self.observed[:, d].sum() > 1 else 1.0
                            for d in range(self.D)])
        loadings = np.where([o.fixed for o in self.outcomes], 1.0, self.loading_prior_mean)
        alpha = obs_mean.copy()
        mu = np.zeros(self.q)
        resid_var = obs_var.copy()
        if method == "anchored":
            mu, alpha, loadings, resid_var = self._anchored_start(alpha, loadings, resid_var)
        resid_var = np.where(np.isfinite(resid_var) & (resid_var > 0), resid_var, 1.0)
        pr = self.priors
        state = ParameterState(
            beta=np.tile(mu, (self.n, 1)),
            mu_beta=mu,
            sigma_beta=np.eye(self.q),
            alpha=alpha,
            gamma=np.zeros((self.D, 4)),
            loadings=loadings.astype(float),
            sigma_eps=np.diag(resid_var),
            y=y.copy(),
            hs_mu=HorseshoeState.initial(self.q),
            hs_gamma=[HorseshoeState.initial(4) for _ in range(self.D)],
            iw_beta=HierIWState.initial(self.q, pr.iw_df, pr.iw_scale),
            iw_eps=HierIWState.initial(self.D, pr.iw_df, pr.iw_scale),
        )
        apply_overrides(state, self.config.initial, self)
        fill = self.mean_matrix(state) if method == "anchored" else np.broadcast_to(obs_mean, y.shape)
        state.y = np.where(self.observed, y, fill)
        for d in self.count_cols:
            rows = self.count_rows[d]
            state.y[rows, d] = y[rows, d] - 0.5
        return state

    def _anchored_start(self, alpha, loadings, resid_var):
        alpha, loadings, resid_var = alpha.copy(), loadings.copy(), resid_var.copy()
        mu = np.zeros(self.q)
        zeta = np.zeros((self.N, self.L))
        for l, facet in enumerate(self.facets):
            anchor = next(d for d, o in enumerate(self.outcomes) if o.facet == facet and o.fixed)
            rows = self.observed[:, anchor]
            if rows.sum() < self.P + 1:
                continue
            design = np.column_stack([np.ones(rows.sum()), self.B[rows]])
            coef, *_ = np.linalg.lstsq(design, self.data.y[rows, anchor], rcond=None)
            alpha[anchor] = coef[0]
            mu[l * self.P:(l + 1) * self.P] = coef[1:]
            zeta[:, l] = self.B @ coef[1:]
            resid_var[anchor] = np.var(self.data.y[rows, anchor] - design @ coef)
        for d in range(self.D):
            if self.outcomes[d].fixed:
                continue
            rows = self.observed[:, d]
            z = zeta[rows, self.facet_pos[d]]
            if rows.sum() < 3 or np.ptp(z) == 0:
                continue
            design = np.column_stack([np.ones(rows.sum()), z])
            coef, *_ = np.linalg.lstsq(design, self.data.y[rows, d], rcond=None)
            alpha[d], loadings[d] = coef
            resid_var[d] = np.var(self.data.y[rows, d] - design @ coef)
        return mu, alpha, loadings, resid_var

    # ------------------------------------------------------------ updates

    def augment_counts(self, state: ParameterState, rng) -> None:
        if self.count_cols.size == 0:
            return
        prec = np.linalg.inv(state.sigma_eps)
        M = self.mean_matrix(state)
        E = state.y - M
        for d in self.count_cols:
            rows = self.count_rows[d]
            if rows.size == 0:
                continue
            pdd = prec[d, d]
            if not pdd > 0:
                raise EngineError("degenerate conditional variance", "augment_counts")
            e = E[rows]
            cond_mean = M[rows, d] - (e @ prec[d] - pdd * e[:, d]) / pdd
            lo, hi = self.count_bounds[d]
            new = sample_truncated_normal(cond_mean, np.sqrt(1.0 / pdd), lo, hi, rng)
            state.y[rows, d] = new
            E[rows, d] = new - M[rows, d]

    def impute_missing(self, state: ParameterState, rng) -> None:
        """Joint draw of each row's missing block from its Gaussian
        conditional given the observed block. In precision form the
        conditional is N(m_M - P_MM^-1 P_MO (y_O - m_O), P_MM^-1), which equals
        the covariance-form expression."""
        if not self.patterns:
            return
        try:
            prec = np.linalg.inv(state.sigma_eps)
        except np.linalg.LinAlgError:
            raise EngineError("singular residual covariance", "impute_missing") from None
        M = self.mean_matrix(state)
        E = np.where(self.observed, state.y - M, 0.0)
        G = E @ prec
        for rows, idx in self.patterns:
            r = rows[:, None]
            P_mm = prec[idx[:, :, None], idx[:, None, :]]
            try:
                L = np.linalg.cholesky(P_mm)
            except np.linalg.LinAlgError:
                raise EngineError("conditional precision is not positive definite",
                                  "impute_missing") from None
            shift = np.linalg.solve(P_mm, G[r, idx][:, :, None])[:, :, 0]
            z = rng.standard_normal(idx.shape + (1,))
            noise = np.linalg.solve(np.swapaxes(L, 1, 2), z)[:, :, 0]
            state.y[r, idx] = M[r, idx] - shift + noise

    def collapsed_system(self, state: ParameterState) -> tuple[np.ndarray, np.ndarray]:
        """Precision and linear term of p(alpha, mu_beta | rest) with every
        beta_i integrated out, in the stacked order (alpha, mu_beta)."""
        D, q = self.D, self.q
        P = np.linalg.inv(state.sigma_eps)
        A = self.loading_matrix(state.loadings)
        PA = P @ A
        C = A.T @ PA
        sb_inv = np.linalg.inv(state.sigma_beta)
        # subject precision Q_i = Sigma_beta^-1 + kron(C, S_i), Woodbury on
        # Cov(r_i) = G_i Sigma_beta G_i' + I (x) Sigma_eps
        KS = np.einsum("lm,npq->nlpmq", C, self.S).reshape(self.n, q, q)
        Q = KS + sb_inv[None]
        J = np.empty((self.n, D + q, q))  # F_i' Lambda G_i, rows (alpha; mu)
        J[:, :D] = np.einsum("dl,np->ndlp", PA, self.s).reshape(self.n, D, q)
        J[:, D:] = KS
        R = state.y - self.X @ state.gamma.T
        g_rows = ((R @ PA)[:, :, None] * self.B[:, None, :]).reshape(self.N, q)
        g = np.zeros((self.n, q))
        g[self.present] = np.add.reduceat(g_rows, self.starts, axis=0)
        h = np.r_[(R @ P).sum(axis=0), g.sum(axis=0)]
        Pi = np.empty((D + q, D + q))
        Pi[:D, :D] = self.N * P
        Pi[:D, D:] = np.kron(PA, self.s_total[None, :])
        Pi[D:, :D] = Pi[:D, D:].T
        Pi[D:, D:] = np.kron(C, self.S_total)
        try:
            Lq = np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            raise EngineError("subject precision is not positive definite",
                              "update_intercepts_collapsed") from None
        K = np.linalg.solve(Lq, np.swapaxes(J, 1, 2))  # Lq^-1 J_i'
        k = np.linalg.solve(Lq, g[:, :, None])[:, :, 0]
        Pi -= np.einsum("nqa,nqb->ab", K, K)
        h -= np.einsum("nqa,nq->a", K, k)
        prior = np.r_[np.full(D, 1.0 / self.priors.alpha_var),
                      1.0 / np.maximum(state.hs_mu.prior_variance, 1e-300)]
        Pi[np.diag_indices(D + q)] += prior
        return 0.5 * (Pi + Pi.T), h

    def update_intercepts_collapsed(self, state: ParameterState, rng) -> None:
        """Joint draw of (alpha, mu_beta) with every beta_i integrated out.

        Intercepts and first-segment slopes are nearly collinear (the curve
        is pinned to zero at age 0 and ages start near 10), so one-block
        updates crawl along that ridge. Drawing the pair from
        p(alpha, mu_beta | gamma, c, Sigma, y) and then beta_i from its full
        conditional is an exact block draw of (alpha, mu_beta, beta).
        """
        if not self.config.collapsed or "beta" in self.fixed:
            return
        free = np.r_[np.full(self.D, "alpha" not in self.fixed),
                     np.full(self.q, "mu_beta" not in self.fixed)]
        if not free.any():
            return
        Pi, h = self.collapsed_system(state)
        theta = np.r_[state.alpha, state.mu_beta]
        fx = ~free
        Pi_ff = Pi[np.ix_(free, free)]
        mean = np.linalg.solve(Pi_ff, h[free] - Pi[np.ix_(free, fx)] @ theta[fx])
        theta[free] = _mvn(mean, Pi_ff, rng, "update_intercepts_collapsed")
        state.alpha = theta[:self.D].copy()
        state.mu_beta = theta[self.D:].copy()

    def update_beta_i(self, state: ParameterState, rng) -> np.ndarray:
        prec_eps = np.linalg.inv(state.sigma_eps)
        A = self.loading_matrix(state.loadings)
        PA = prec_eps @ A
        C = A.T @ PA  # (L, L)
        R = state.y - state.alpha[None, :] - self.X @ state.gamma.T
        W = R @ PA  # (N, L)
        h_rows = (W[:, :, None] * self.B[:, None, :]).reshape(self.N, self.q)
        h = np.zeros((self.n, self.q))
        h[self.present] = np.add.reduceat(h_rows, self.starts, axis=0)
        try:
            prior_prec = np.linalg.inv(state.sigma_beta)
        except np.linalg.LinAlgError:
            raise EngineError("Sigma_beta is singular", "update_beta_i") from None
        h += prior_prec @ state.mu_beta
        # kron(C, S_i) for every subject
        K = np.einsum("lm,npq->nlpmq", C, self.S).reshape(self.n, self.q, self.q)
        prec = K + prior_prec[None]
        try:
            Lc = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            raise EngineError("posterior precision is not positive definite", "update_beta_i") from None
        mean = np.linalg.solve(prec, h[:, :, None])[:, :, 0]
        z = rng.standard_normal((self.n, self.q, 1))
        state.beta = mean + np.linalg.solve(np.swapaxes(Lc, 1, 2), z)[:, :, 0]
        return state.beta

    def update_population(self, state: ParameterState, rng) -> tuple[np.ndarray, np.ndarray]:
        if "mu_beta" not in self.fixed:
            prior_prec = 1.0 / np.maximum(state.hs_mu.prior_variance, 1e-300)
            sb_inv = np.linalg.inv(state.sigma_beta)
            prec = np.diag(prior_prec) + self.n * sb_inv
            prec = 0.5 * (prec + prec.T)
            h = sb_inv @ state.beta.sum(axis=0)
            mean = np.linalg.solve(prec, h)
            state.mu_beta = _mvn(mean, prec, rng, "update_population")
        if "sigma_beta" not in self.fixed:
            dev = state.beta - state.mu_beta[None, :]
            scatter = dev.T @ dev
            try:
                state.sigma_beta, state.iw_beta = draw_hier_iw(
                    0.5 * (scatter + scatter.T), self.n, state.iw_beta, rng
                )
            except PriorError as exc:
                raise EngineError(str(exc), "update_population") from None
        return state.mu_beta, state.sigma_beta

    def _offset_target(self, state, E, prec, d):
        """Pseudo-response shift that folds the other outcomes' residuals
        into outcome d's conditional regression."""
        return (E @ prec[d] - prec[d, d] * E[:, d]) / prec[d, d]

    def update_outcome_regression(self, state: ParameterState, rng) -> tuple[np.ndarray, np.ndarray]:
        free_alpha = "alpha" not in self.fixed
        free_gamma = "gamma" not in self.fixed
        if not (free_alpha or free_gamma):
            return state.alpha, state.gamma
        cols = ([0] if free_alpha else []) + ([1, 2, 3, 4] if free_gamma else [])
        Xd = self.Xt[:, cols]
        XtX = self.XtX[np.ix_(cols, cols)]
        prec_eps = np.linalg.inv(state.sigma_eps)
        zeta = self.latent(state)
        M = self.mean_matrix(state, zeta)
        E = state.y - M
        for d in range(self.D):
            pdd = prec_eps[d, d]
            theta_now = np.r_[state.alpha[d], state.gamma[d]][cols]
            target = E[:, d] + Xd @ theta_now + self._offset_target(state, E, prec_eps, d)
            prior_prec = []
            if free_alpha:
                prior_prec.append(1.0 / self.priors.alpha_var)
            if free_gamma:
                prior_prec.extend(1.0 / np.maximum(state.hs_gamma[d].prior_variance, 1e-300))
            prec = pdd * XtX + np.diag(prior_prec)
            mean = np.linalg.solve(prec, pdd * (Xd.T @ target))
            theta = _mvn(mean, prec, rng, "update_outcome_regression")
            full = np.r_[state.alpha[d], state.gamma[d]]
            full[cols] = theta
            state.alpha[d] = full[0]
            state.gamma[d] = full[1:]
            E[:, d] = target - self._offset_target(state, E, prec_eps, d) - Xd @ theta
        return state.alpha, state.gamma

    def update_loadings(self, state: ParameterState, rng) -> np.ndarray:
        if "loadings" in self.fixed or self.free_loadings.size == 0:
            return state.loadings
        prec_eps = np.linalg.inv(state.sigma_eps)
        zeta = self.latent(state)
        M = self.mean_matrix(state, zeta)
        E = state.y - M
        v0 = self.priors.loading_var
        for d in self.free_loadings:
            z = zeta[:, self.facet_pos[d]]
            pdd = prec_eps[d, d]
            shift = self._offset_target(state, E, prec_eps, d)
            target = E[:, d] + state.loadings[d] * z + shift
            prec = pdd * (z @ z) + 1.0 / v0
            mean = (pdd * (z @ target) + self.loading_prior_mean[d] / v0) / prec
            c = mean + rng.standard_normal() / np.sqrt(prec)
            state.loadings[d] = c
            E[:, d] = target - shift - c * z
        return state.loadings

    def update_sigma_eps(self, state: ParameterState, rng) -> np.ndarray:
        if "sigma_eps" in self.fixed:
            return state.sigma_eps
        E = state.y - self.mean_matrix(state)
        scatter = E.T @ E
        try:
            state.sigma_eps, state.iw_eps = draw_hier_iw(
                0.5 * (scatter + scatter.T), self.N, state.iw_eps, rng
            )
        except PriorError as exc:
            raise EngineError(str(exc), "update_sigma_eps") from None
        return state.sigma_eps

    def update_shrinkage(self, state: ParameterState, rng) -> None:
        if "shrinkage" in self.fixed:
            return
        if "mu_beta" not in self.fixed:
            state.hs_mu = draw_horseshoe(state.mu_beta, state.hs_mu, rng)
        if "gamma" not in self.fixed:
            state.hs_gamma = [draw_horseshoe(state.gamma[d], h, rng)
                              for d, h in enumerate(state.hs_gamma)]

    def sweep(self, state: ParameterState, rng, iteration: int | None = None) -> ParameterState:
        for name in SWEEP:
            if name == "update_beta_i" and "beta" in self.fixed:
                continue
            try:
                getattr(self, name)(state, rng)
            except EngineError as exc:
                raise EngineError(str(exc).split(": ", 1)[-1], name, iteration) from None
            except np.linalg.LinAlgError as exc:
                raise EngineError(str(exc), name, iteration) from None
        return state

    # ------------------------------------------------------------ density

    def log_joint(self, state: ParameterState) -> float:
        """Complete-data log joint density (latent y* and imputed cells
        included) of the current state."""
        E = state.y - self.mean_matrix(state)
        out = stats.multivariate_normal(np.zeros(self.D), state.sigma_eps).logpdf(E).sum()
        out += stats.multivariate_normal(state.mu_beta, state.sigma_beta).logpdf(state.beta).sum()
        out += stats.norm(0, np.sqrt(state.hs_mu.prior_variance)).logpdf(state.mu_beta).sum()
        out += stats.norm(0, np.sqrt(self.priors.alpha_var)).logpdf(state.alpha).sum()
        for d in range(self.D):
            out += stats.norm(0, np.sqrt(state.hs_gamma[d].prior_variance)).logpdf(state.gamma[d]).sum()
        fl = self.free_loadings
        out += stats.norm(self.loading_prior_mean[fl], np.sqrt(self.priors.loading_var)).logpdf(
            state.loadings[fl]).sum()
        for hs in [state.hs_mu, *state.hs_gamma]:
            out += _horseshoe_aux_logpdf(hs)
        for sigma, iw in ((state.sigma_beta, state.iw_beta), (state.sigma_eps, state.iw_eps)):
            p = iw.p
            out += stats.invwishart(iw.nu + p - 1, 2 * iw.nu * np.diag(1 / iw.a)).logpdf(sigma)
            out += stats.invgamma(0.5, scale=1 / iw.scales() ** 2).logpdf(iw.a).sum()
        return float(out)


def _horseshoe_aux_logpdf(hs: HorseshoeState) -> float:
    ig = stats.invgamma
    return float(
        ig(0.5, scale=1 / hs.nu).logpdf(hs.lam2).sum()
        + ig(0.5, scale=1.0).logpdf(hs.nu).sum()
        + ig(0.5, scale=1 / hs.xi).logpdf(hs.tau2)
        + ig(0.5, scale=1.0).logpdf(hs.xi)
    )


def apply_overrides(state: ParameterState, initial: dict[str, Any], model: GibbsModel) -> None:
    """Overwrite initial values from a mapping; keys are ParameterState field
    names plus ``mu_prior_var`` / ``gamma_prior_var`` to pin horseshoe
    prior variances (sets lambda^2 with tau^2 = 1)."""
    for key, value in (initial or {}).items():
        if key == "mu_prior_var":
            state.hs_mu.lam2 = np.broadcast_to(np.asarray(value, float), (model.q,)).copy()
            state.hs_mu.tau2 = 1.0
        elif key == "gamma_prior_var":
            for h in state.hs_gamma:
                h.lam2 = np.broadcast_to(np.asarray(value, float), (4,)).copy()
                h.tau2 = 1.0
        elif key in ("beta", "mu_beta", "sigma_beta", "alpha", "gamma", "loadings", "sigma_eps"):
            cur = getattr(state, key)
            arr = np.asarray(value, dtype=float)
            if key == "beta" and arr.ndim == 1:
                arr = np.broadcast_to(arr, cur.shape)
            if arr.shape != cur.shape:
                raise ValueError(f"initial {key} has shape {arr.shape}, expected {cur.shape}")
            setattr(state, key, arr.copy())
        else:
            raise ValueError(f"unknown initial value {key!r}")
    for d, o in enumerate(model.outcomes):
        if o.fixed and state.loadings[d] != 1.0:
            raise ValueError(f"loading for {o.name} is constrained to 1")


# ---------------------------------------------------------------- chains


@dataclass
class ChainOutput:
    chain: int
    seed: int
    draws: dict[str, np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.draws["alpha"].shape[0]


def parameter_names(model: GibbsModel) -> dict[str, list[str]]:
    P, facets = model.P, model.facets
    outs = [o.name for o in model.outcomes]
    mu = [f"mu_beta[{f},{k}]" for f in facets for k in range(P)]
    iu_b = np.triu_indices(model.q)
    iu_e = np.triu_indices(model.D)
    return {
        "mu_beta": mu,
        "sigma_beta": [f"sigma_beta[{i},{j}]" for i, j in zip(*iu_b)],
        "alpha": [f"alpha[{o}]" for o in outs],
        "gamma": [f"gamma[{o},{c}]" for o in outs for c in COVARIATE_NAMES],
        "loadings": [f"loading[{o}]" for o in outs],
        "sigma_eps": [f"sigma_eps[{outs[i]},{outs[j]}]" for i, j in zip(*iu_e)],
        "tau2_mu": ["tau2_mu"],
        "tau2_gamma": [f"tau2_gamma[{o}]" for o in outs],
    }


def flatten_draw(model: GibbsModel, state: ParameterState) -> dict[str, np.ndarray]:
    iu_b = np.triu_indices(model.q)
    iu_e = np.triu_indices(model.D)
    return {
        "mu_beta": state.mu_beta.copy(),
        "sigma_beta": state.sigma_beta[iu_b],
        "alpha": state.alpha.copy(),
        "gamma": state.gamma.reshape(-1).copy(),
        "loadings": state.loadings.copy(),
        "sigma_eps": state.sigma_eps[iu_e],
        "tau2_mu": np.array([state.hs_mu.tau2]),
        "tau2_gamma": np.array([h.tau2 for h in state.hs_gamma]),
    }


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain)]))


def run_chain(
    dataset: LongitudinalDataset,
    config: ModelConfig,
    seed: int | None = None,
    chain: int = 0,
    initial_state: ParameterState | None = None,
    callback=None,
) -> ChainOutput:
    """Run one chain; draws are kept after burn-in at every ``thin``-th
    iteration. The same (seed, chain) always gives identical output."""
    settings = config.mcmc
    seed = settings.seed if seed is None else seed
    model = GibbsModel(dataset, config)
    rng = chain_rng(seed, chain)
    state = initial_state.copy() if initial_state is not None else model.initial_state()
    export = [dataset.subject_ids.index(s) for s in config.export_subjects]
    stored: dict[str, list] = {}
    t0 = time.perf_counter()
    for it in range(1, settings.iterations + 1):
        model.sweep(state, rng, iteration=it)
        if callback is not None:
            callback(it, state, model)
        if it > settings.burn_in and (it - settings.burn_in) % settings.thin == 0:
            for k, v in flatten_draw(model, state).items():
                stored.setdefault(k, []).append(v)
            if export:
                stored.setdefault("beta_export", []).append(state.beta[export].copy())
            if config.store_latent:
                stored.setdefault("y_latent", []).append(state.y.copy())
    names = parameter_names(model)
    draws = {}
    for k, cols in names.items():
        draws[k] = np.asarray(stored.get(k, np.zeros((0, len(cols)))), dtype=float).reshape(-1, len(cols))
    if export:
        draws["beta_export"] = np.asarray(stored.get("beta_export", np.zeros((0, len(export), model.q))))
    if config.store_latent:
        draws["y_latent"] = np.asarray(stored.get("y_latent", np.zeros((0, model.N, model.D))))
    meta = {
        "chain": chain,
        "seed": seed,
        "iterations": settings.iterations,
        "burn_in": settings.burn_in,
        "thin": settings.thin,
        "n_draws": settings.n_draws,
        "elapsed_seconds": time.perf_counter() - t0,
        "final_state": state,
    }
    return ChainOutput(chain=chain, seed=seed, draws=draws, meta=meta)


def _run_chain_job(args):
    dataset, config, seed, chain = args
    out = run_chain(dataset, config, seed=seed, chain=chain)
    out.meta.pop("final_state", None)
    return out


def run_chains(
    dataset: LongitudinalDataset, config: ModelConfig, threads: int = 1
) -> list[ChainOutput]:
    """All ``config.mcmc.chains`` chains, in worker processes when
    ``threads > 1``. Chain k always uses generator (seed, k)."""
    jobs = [(dataset, config, config.mcmc.seed, k) for k in range(config.mcmc.chains)]
    if threads <= 1 or len(jobs) == 1:
        return [_run_chain_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        return list(pool.map(_run_chain_job, jobs))
