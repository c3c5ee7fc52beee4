"""Shrinkage and covariance priors.

* Horseshoe prior via the inverse-gamma auxiliary-variable representation:
  theta_j ~ N(0, lambda_j^2 tau^2), lambda_j^2 | nu_j ~ IG(1/2, 1/nu_j),
  tau^2 | xi ~ IG(1/2, 1/xi), nu_j, xi ~ IG(1/2, 1).
* Hierarchical inverse-Wishart covariance prior:
  Sigma | a ~ IW(nu + p - 1, 2 nu diag(1/a)), a_j ~ IG(1/2, 1/A_j^2),
  which makes every marginal standard deviation half-t(nu, A_j).

All ``*_conditional*`` functions are deterministic and return distribution
parameters; the ``draw_*`` helpers consume an injected ``numpy`` Generator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

TINY = 1e-300
SPD_TOL = 1e-10


class PriorError(ValueError):
    pass


def _recip(x):
    return 1.0 / np.maximum(x, TINY)


def sample_inverse_gamma(shape, scale, rng: np.random.Generator, size=None):
    """IG(shape, scale) draws as ``scale / Gamma(shape, 1)``, one independent
    draw per element of the broadcast of ``shape`` and ``scale``."""
    if size is None:
        size = np.broadcast_shapes(np.shape(shape), np.shape(scale)) or None
    g = rng.standard_gamma(shape, size=size)
    return np.asarray(scale) * _recip(g)


@dataclass
class HorseshoeState:
    """Local scales ``lam2``, local auxiliaries ``nu``, global ``tau2`` and
    global auxiliary ``xi`` for one coefficient block."""

    lam2: np.ndarray
    nu: np.ndarray
    tau2: float
    xi: float

    @classmethod
    def initial(cls, p: int) -> "HorseshoeState":
        return cls(np.ones(p), np.ones(p), 1.0, 1.0)

    def check(self) -> None:
        parts = [self.lam2, self.nu, np.atleast_1d(self.tau2), np.atleast_1d(self.xi)]
        for part in parts:
            if not np.all(np.isfinite(part)) or np.any(np.asarray(part) <= 0):
                raise PriorError("horseshoe state components must be positive and finite")

    @property
    def prior_variance(self) -> np.ndarray:
        return self.tau2 * self.lam2

    def copy(self) -> "HorseshoeState":
        return HorseshoeState(self.lam2.copy(), self.nu.copy(), float(self.tau2), float(self.xi))


@dataclass(frozen=True)
class HorseshoeConditionals:
    """Inverse-gamma (shape, scale) pairs for each horseshoe component."""

    lam2_shape: float
    lam2_scale: np.ndarray
    nu_shape: float
    nu_scale: np.ndarray
    tau2_shape: float
    tau2_scale: float
    xi_shape: float
    xi_scale: float


def horseshoe_conditional_params(coeffs, state: HorseshoeState) -> HorseshoeConditionals:
    theta = np.asarray(coeffs, dtype=float)
    if theta.shape != state.lam2.shape:
        raise PriorError(f"{theta.size} coefficients but {state.lam2.size} local scales")
    state.check()
    sq = theta**2
    p = theta.size
    return HorseshoeConditionals(
        lam2_shape=1.0,
        lam2_scale=_recip(state.nu) + sq / (2.0 * max(state.tau2, TINY)),
        nu_shape=1.0,
        nu_scale=1.0 + _recip(state.lam2),
        tau2_shape=(p + 1) / 2.0,
        tau2_scale=float(_recip(state.xi) + np.sum(sq * _recip(2.0 * state.lam2))),
        xi_shape=1.0,
        xi_scale=float(1.0 + _recip(state.tau2)),
    )


def draw_horseshoe(coeffs, state: HorseshoeState, rng: np.random.Generator) -> HorseshoeState:
    """One systematic sweep lambda^2 -> tau^2 -> nu -> xi, each from its
    full conditional given the freshest values of the others."""
    theta = np.asarray(coeffs, dtype=float)
    s = state.copy()
    c = horseshoe_conditional_params(theta, s)
    s.lam2 = sample_inverse_gamma(c.lam2_shape, c.lam2_scale, rng)
    c = horseshoe_conditional_params(theta, s)
    s.tau2 = float(sample_inverse_gamma(c.tau2_shape, c.tau2_scale, rng))
    c = horseshoe_conditional_params(theta, s)
    s.nu = sample_inverse_gamma(c.nu_shape, c.nu_scale, rng)
    s.xi = float(sample_inverse_gamma(c.xi_shape, c.xi_scale, rng))
    return s


@dataclass
class HierIWState:
    """Auxiliary precisions ``a`` of the hierarchical inverse-Wishart prior."""

    a: np.ndarray
    nu: float = 2.0
    A: float | np.ndarray = 25.0

    @classmethod
    def initial(cls, p: int, nu: float = 2.0, A: float = 25.0) -> "HierIWState":
        return cls(np.ones(p), nu, A)

    @property
    def p(self) -> int:
        return self.a.size

    def scales(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.A, dtype=float), (self.p,))

    def copy(self) -> "HierIWState":
        return HierIWState(self.a.copy(), self.nu, self.A)


@dataclass(frozen=True)
class HierIWConditional:
    df: float
    scale: np.ndarray
    a_shape: float
    a_scale: np.ndarray | None  # None unless sigma was given


def check_spd(S: np.ndarray, name: str = "matrix", tol: float = SPD_TOL, semi: bool = False):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise PriorError(f"{name} must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise PriorError(f"{name} has non-finite entries")
    if np.max(np.abs(S - S.T), initial=0.0) > tol * max(1.0, np.max(np.abs(S), initial=0.0)):
        raise PriorError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(S) if S.size else np.zeros(0)
    floor = -tol if semi else tol
    if eig.size and (eig.min() < floor if semi else eig.min() <= 0):
        raise PriorError(f"{name} is not positive {'semi' if semi else ''}definite (min eigenvalue {eig.min():.3g})")
    return S


def hier_iw_conditional(scatter, n: int, state: HierIWState, sigma=None) -> HierIWConditional:
    """Conditional parameters of the hierarchical inverse-Wishart prior.

    Sigma | a, data ~ IW(nu + p - 1 + n, 2 nu diag(1/a) + scatter), and, when
    ``sigma`` is supplied, a_j | Sigma ~ IG((nu + p)/2, nu (Sigma^-1)_jj + 1/A_j^2).
    """
    scatter = check_spd(scatter, "scatter", semi=True)
    p = state.p
    if scatter.shape != (p, p):
        raise PriorError(f"scatter shape {scatter.shape} does not match p={p}")
    if n < 0:
        raise PriorError("sample count must be non-negative")
    if np.any(state.a <= 0):
        raise PriorError("auxiliary variables must be positive")
    nu = state.nu
    scale = 2.0 * nu * np.diag(_recip(state.a)) + scatter
    a_scale = None
    if sigma is not None:
        prec_diag = np.diag(np.linalg.inv(sigma))
        a_scale = nu * prec_diag + 1.0 / state.scales() ** 2
    return HierIWConditional(nu + p - 1 + n, scale, (nu + p) / 2.0, a_scale)


def sample_inverse_wishart(df: float, scale, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draw with density proportional to
    ``|S|^{-(df+p+1)/2} exp(-tr(scale S^{-1})/2)``, via the Bartlett
    decomposition of the Wishart(df, scale^{-1}) precision."""
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if df <= p - 1:
        raise PriorError(f"degrees of freedom {df} must exceed p - 1 = {p - 1}")
    try:
        L_scale = np.linalg.cholesky(0.5 * (scale + scale.T))
    except np.linalg.LinAlgError:
        raise PriorError("inverse-Wishart scale is not positive definite") from None
    # W = C A A^T C^T with C = L_scale^{-T} (any square root of scale^-1 works,
    # Wishart(df, I) is rotation invariant), so Sigma = W^-1 = F F^T, F = L_scale A^{-T}.
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    low = np.tril_indices(p, -1)
    A[low] = rng.standard_normal(len(low[0]))
    Ainv = solve_triangular(A, np.eye(p), lower=True)
    F = L_scale @ Ainv.T
    S = F @ F.T
    return 0.5 * (S + S.T)


def draw_hier_iw(scatter, n: int, state: HierIWState, rng: np.random.Generator):
    """Sigma from its conditional given ``a``, then ``a`` given the new Sigma."""
    cond = hier_iw_conditional(scatter, n, state)
    sigma = sample_inverse_wishart(cond.df, cond.scale, rng)
    cond = hier_iw_conditional(scatter, n, state, sigma=sigma)
    new = state.copy()
    new.a = sample_inverse_gamma(cond.a_shape, cond.a_scale, rng)
    return sigma, new


def draw_hier_iw_prior(state: HierIWState, rng: np.random.Generator):
    """Forward draw (a, Sigma) from the prior itself."""
    p = state.p
    a = sample_inverse_gamma(0.5, 1.0 / state.scales() ** 2, rng)
    s = HierIWState(a, state.nu, state.A)
    cond = hier_iw_conditional(np.zeros((p, p)), 0, s)
    return sample_inverse_wishart(cond.df, cond.scale, rng), s
