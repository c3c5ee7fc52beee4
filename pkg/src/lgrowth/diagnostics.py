"""Posterior summaries: HPD intervals, split-chain R-hat and ESS, population
trajectory bands, covariate tables and Spearman correlation matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import COVARIATE_NAMES, LongitudinalDataset
from .spline import basis_matrix

AGE_RANGE = (10.0, 21.0)


class DiagnosticsError(ValueError):
    pass


def hpd_interval(draws, level: float = 0.95) -> tuple[float, float]:
    """Shortest contiguous window of sorted draws holding ceil(level * n)
    of them; ties go to the earliest window."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n < 20:
        raise DiagnosticsError(f"HPD needs at least 20 draws, got {n}")
    if not 0 < level < 1:
        raise DiagnosticsError("level must lie in (0, 1)")
    k = math.ceil(level * n)
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=-1)
    return np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n] / n


def effective_sample_size(chains) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence estimator.
    ``chains`` has shape (m, n)."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    if n < 4:
        return float(m * n)
    if np.all(np.ptp(x, axis=1) == 0) and np.ptp(x.mean(axis=1)) == 0:
        return float(m * n)
    acov = _autocovariance(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    var_plus = W * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, enforce monotone decrease
    total = 0.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / math.log10(m * n) if m * n > 10 else 1e-3)
    return float(m * n / tau)


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction; nan when within-chain
    variance is zero."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    half = n // 2
    if half < 2:
        return float("nan")
    s = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    nn = half
    W = s.var(axis=1, ddof=1).mean()
    B = nn * s.mean(axis=1).var(ddof=1)
    if W <= 0:
        return float("nan")
    var_plus = (nn - 1) / nn * W + B / nn
    return float(math.sqrt(var_plus / W))


@dataclass(frozen=True)
class ConvergenceResult:
    ess: float
    rhat: float
    flagged: bool  # constant chains: rhat undefined


def convergence(chains) -> ConvergenceResult:
    """ESS and split R-hat for one scalar parameter, chains shaped (m, n)."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    if x.shape[0] < 2:
        raise DiagnosticsError("convergence diagnostics need at least 2 chains")
    rhat = split_rhat(x)
    ess = effective_sample_size(x)
    return ConvergenceResult(ess=ess, rhat=rhat, flagged=not math.isfinite(rhat))


@dataclass(frozen=True)
class PosteriorSummary:
    name: str
    mean: float
    sd: float
    hpd_lo: float
    hpd_hi: float
    ess: float
    rhat: float

    @property
    def excludes_zero(self) -> bool:
        return self.hpd_lo > 0 or self.hpd_hi < 0


def summarize_parameter(name: str, chains, level: float = 0.95) -> PosteriorSummary:
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    flat = x.ravel()
    lo, hi = hpd_interval(flat, level)
    if x.shape[0] >= 2:
        conv = convergence(x)
        ess, rhat = conv.ess, conv.rhat
    else:
        ess, rhat = effective_sample_size(x), float("nan")
    return PosteriorSummary(name, float(flat.mean()), float(flat.std(ddof=1)), lo, hi,
                            min(ess, float(flat.size)), rhat)


def summarize_draws(draws: Mapping[str, np.ndarray], level: float = 0.95) -> list[PosteriorSummary]:
    """``draws`` maps parameter name -> array (chains, draws)."""
    return [summarize_parameter(k, v, level) for k, v in draws.items()]


@dataclass(frozen=True)
class TrajectoryBand:
    facet: int
    ages: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def default_age_grid() -> np.ndarray:
    return np.round(np.arange(100, 211) / 10.0, 10)


def trajectory_band(mu_draws, knots, ages=None, facets: Sequence[int] = (1, 2),
                    level: float = 0.95) -> list[TrajectoryBand]:
    """Pointwise posterior mean and HPD of the population curve
    b(age) . mu_beta for each facet. ``mu_draws`` is (S, L*(K+1))."""
    ages = default_age_grid() if ages is None else np.asarray(ages, dtype=float)
    if ages.size == 0 or ages.min() < AGE_RANGE[0] or ages.max() > AGE_RANGE[1]:
        raise DiagnosticsError(f"age grid must lie within {AGE_RANGE}")
    mu = np.atleast_2d(np.asarray(mu_draws, dtype=float))
    if mu.shape[0] == 0:
        raise DiagnosticsError("no draws")
    B = basis_matrix(ages, knots)
    P = B.shape[1]
    if mu.shape[1] != P * len(facets):
        raise DiagnosticsError(f"mu draws have {mu.shape[1]} columns, expected {P * len(facets)}")
    bands = []
    for l, facet in enumerate(facets):
        curves = mu[:, l * P:(l + 1) * P] @ B.T  # (S, G)
        mean = curves.mean(axis=0)
        if curves.shape[0] >= 20:
            lo, hi = np.array([hpd_interval(curves[:, g], level) for g in range(ages.size)]).T
        else:
            lo, hi = curves.min(axis=0), curves.max(axis=0)
        bands.append(TrajectoryBand(facet, ages, mean, lo, hi))
    return bands


@dataclass(frozen=True)
class CovariateCell:
    mean: float
    hpd_excludes_zero: bool


def covariate_table(summaries: Sequence[PosteriorSummary] | Mapping[str, PosteriorSummary],
                    outcomes: Sequence[str]) -> dict[str, dict[str, CovariateCell]]:
    """Rows per outcome with intercept and the four covariate effects."""
    by_name = summaries if isinstance(summaries, Mapping) else {s.name: s for s in summaries}
    table = {}
    for o in outcomes:
        row = {}
        for col, key in [("intercept", f"alpha[{o}]")] + [(c, f"gamma[{o},{c}]") for c in COVARIATE_NAMES]:
            if key not in by_name:
                raise DiagnosticsError(f"missing summary for {key}")
            s = by_name[key]
            row[col] = CovariateCell(s.mean, s.excludes_zero)
        table[o] = row
    return table


def spearman_matrix(dataset: LongitudinalDataset, session: str | None = None,
                    post_season: int | None = None, min_pairs: int = 3) -> np.ndarray:
    """Pairwise-complete Spearman correlations with average ranks for ties;
    entries with fewer than ``min_pairs`` complete pairs are nan."""
    rows = np.ones(dataset.n_rows, dtype=bool)
    if session is not None:
        rows &= np.asarray(dataset.session) == session
    if post_season is not None:
        rows &= dataset.post_season == post_season
    y = dataset.y[rows]
    D = dataset.D
    out = np.full((D, D), np.nan)
    for i in range(D):
        for j in range(i, D):
            ok = ~np.isnan(y[:, i]) & ~np.isnan(y[:, j])
            if ok.sum() < min_pairs:
                continue
            if i == j:
                out[i, i] = 1.0
                continue
            rx, ry = rankdata(y[ok, i]), rankdata(y[ok, j])
            if np.ptp(rx) == 0 or np.ptp(ry) == 0:
                continue
            r = float(np.corrcoef(rx, ry)[0, 1])
            out[i, j] = out[j, i] = max(-1.0, min(1.0, r))
    return out
