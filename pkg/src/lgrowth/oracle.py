"""Brute-force reference computations for validating the sampler.

Nothing here calls into the Gibbs engine: the tiny-model posterior integrates
the random effects out analytically and evaluates the remaining one or two
free parameters on a trapezoidal grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class TinyModel:
    """One outcome with loading 1 on one facet, ages below the first knot
    (so the latent curve is ``beta_i * age``), known variances.

    ``ages[i]`` / ``y[i]`` hold the occasions of subject i. Free parameters
    are the population slope ``mu`` and, unless ``alpha_fixed`` is given,
    the intercept ``alpha``.
    """

    ages: tuple[tuple[float, ...], ...]
    y: tuple[tuple[float, ...], ...]
    slope_var: float  # Var(beta_i)
    noise_var: float
    mu_prior_var: float
    alpha_prior_var: float = 1.0
    alpha_fixed: float | None = None
    free: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if len(self.ages) != len(self.y) or len(self.ages) > 3:
            raise ValueError("tiny model allows at most 3 subjects with matching ages/outcomes")
        for a, v in zip(self.ages, self.y):
            if len(a) != len(v) or len(a) > 2:
                raise ValueError("tiny model allows at most 2 occasions per subject")
        if min(self.noise_var, self.mu_prior_var, self.alpha_prior_var) <= 0 or self.slope_var < 0:
            raise ValueError("variances must be positive (slope variance non-negative)")
        free = ("mu",) if self.alpha_fixed is not None else ("mu", "alpha")
        object.__setattr__(self, "free", free)


@dataclass(frozen=True)
class GridPosterior:
    mean: dict[str, float]
    sd: dict[str, float]
    tail_mass_bound: float
    n_points: int


def _quadratic_terms(tiny: TinyModel):
    """Coefficients of the Gaussian log marginal likelihood as a quadratic
    in (mu, alpha): returns (A, b, c, logdet) with
    sum_i r_i' C_i^-1 r_i = [mu, alpha] A [mu, alpha]' - 2 b' [mu, alpha] + c."""
    A = np.zeros((2, 2))
    b = np.zeros(2)
    c = 0.0
    logdet = 0.0
    n_obs = 0
    for ages, ys in zip(tiny.ages, tiny.y):
        x = np.asarray(ages, dtype=float)
        y = np.asarray(ys, dtype=float)
        C = tiny.slope_var * np.outer(x, x) + tiny.noise_var * np.eye(x.size)
        Ci = np.linalg.inv(C)
        F = np.column_stack([x, np.ones_like(x)])
        A += F.T @ Ci @ F
        b += F.T @ Ci @ y
        c += y @ Ci @ y
        logdet += math.log(np.linalg.det(C))
        n_obs += x.size
    return A, b, c, logdet, n_obs


def grid_posterior(tiny: TinyModel, n_points: int = 2001, width_sd: float = 8.0) -> GridPosterior:
    """Posterior means and sds of the free parameters by trapezoidal
    quadrature on a grid spanning +-``width_sd`` prior sd around the prior
    mean (zero)."""
    if n_points < 3:
        raise ValueError("need at least 3 grid points")
    A, b, c, _, _ = _quadratic_terms(tiny)
    sd_mu = math.sqrt(tiny.mu_prior_var)
    mu = np.linspace(-width_sd * sd_mu, width_sd * sd_mu, n_points)
    tail = math.erfc(width_sd / math.sqrt(2.0))
    if tiny.alpha_fixed is None:
        sd_a = math.sqrt(tiny.alpha_prior_var)
        al = np.linspace(-width_sd * sd_a, width_sd * sd_a, n_points)
        M, Al = np.meshgrid(mu, al, indexing="ij")
        quad = A[0, 0] * M**2 + 2 * A[0, 1] * M * Al + A[1, 1] * Al**2 - 2 * (b[0] * M + b[1] * Al) + c
        logp = -0.5 * quad - 0.5 * M**2 / tiny.mu_prior_var - 0.5 * Al**2 / tiny.alpha_prior_var
        w = np.exp(logp - logp.max())
        Z = np.trapezoid(np.trapezoid(w, al, axis=1), mu)

        def moment(f):
            return np.trapezoid(np.trapezoid(w * f, al, axis=1), mu) / Z

        m_mu, m_al = moment(M), moment(Al)
        return GridPosterior(
            mean={"mu": float(m_mu), "alpha": float(m_al)},
            sd={"mu": float(math.sqrt(moment((M - m_mu) ** 2))),
                "alpha": float(math.sqrt(moment((Al - m_al) ** 2)))},
            tail_mass_bound=2 * tail,
            n_points=n_points,
        )
    a0 = tiny.alpha_fixed
    quad = A[0, 0] * mu**2 + 2 * A[0, 1] * mu * a0 + A[1, 1] * a0**2 - 2 * (b[0] * mu + b[1] * a0) + c
    logp = -0.5 * quad - 0.5 * mu**2 / tiny.mu_prior_var
    w = np.exp(logp - logp.max())
    Z = np.trapezoid(w, mu)
    m = np.trapezoid(w * mu, mu) / Z
    v = np.trapezoid(w * (mu - m) ** 2, mu) / Z
    return GridPosterior({"mu": float(m)}, {"mu": float(math.sqrt(v))}, tail, n_points)


def _phi(x: float) -> float:
    return 0.0 if math.isinf(x) else math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def _upper_tail(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def truncated_normal_moments(m: float, v: float, lower: float, upper: float) -> tuple[float, float]:
    """Mean and variance of N(m, v) truncated to (lower, upper]."""
    if not v > 0:
        raise ValueError("variance must be positive")
    if not lower < upper:
        raise ValueError("empty truncation interval")
    s = math.sqrt(v)
    a = (lower - m) / s
    b = (upper - m) / s
    # mass via whichever tail keeps the subtraction accurate
    if a > 0:
        Z = _upper_tail(a) - _upper_tail(b)
    else:
        Z = _upper_tail(-b) - _upper_tail(-a)
    if Z <= 0:
        raise ValueError("truncation interval has no numerical mass")
    pa, pb = _phi(a), _phi(b)
    apa = 0.0 if math.isinf(a) else a * pa
    bpb = 0.0 if math.isinf(b) else b * pb
    ratio = (pa - pb) / Z
    mean = m + s * ratio
    var = v * (1.0 + (apa - bpb) / Z - ratio**2)
    return mean, var


def exhaustive_hpd(draws: Sequence[float], level: float) -> tuple[float, float]:
    """Shortest window over sorted draws by checking every contiguous window
    explicitly (quadratic, for small test inputs)."""
    x = sorted(draws)
    n = len(x)
    k = math.ceil(level * n)
    best = None
    for i in range(n):
        for j in range(i, n):
            if j - i + 1 == k:
                width = x[j] - x[i]
                if best is None or width < best[0]:
                    best = (width, x[i], x[j])
    return best[1], best[2]


def spearman_by_ranks(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks, ranks assigned by counting."""
    def ranks(v):
        out = []
        for a in v:
            less = sum(1 for b in v if b < a)
            equal = sum(1 for b in v if b == a)
            out.append(less + (equal + 1) / 2.0)
        return out

    rx, ry = ranks(x), ranks(y)
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    return sxy / math.sqrt(sxx * syy)
