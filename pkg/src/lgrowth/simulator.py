"""Synthetic cohorts drawn forward from the growth model.

``default_truth`` uses the published population slopes, intercepts,
covariate effects and missingness rates as generating values. Quantities the
source study never reported (Sigma_beta, Sigma_eps, the free loadings) are
invented calibration knobs and are labelled as such in ``TRUTH_PROVENANCE``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .config import DEFAULT_KNOTS
from .data import (
    POSITIONS,
    LongitudinalDataset,
    Observation,
    OutcomeSpec,
    default_outcomes,
)
from .gibbs import round_count
from .spline import KnotVector, basis_matrix

PUBLISHED_SLOPES = {
    1: (28.59, 24.86, 6.51, 8.52),
    2: (0.48, 0.95, 0.11, 0.07),
}

# intercept, post-season, forward, midfielder, defender
PUBLISHED_REGRESSION = np.array([
    [141.08, 1.43, 0.00, 0.00, -0.01],
    [0.01, -0.03, 0.00, 0.00, 0.00],
    [-1.26, -0.09, 0.00, -0.04, 0.00],
    [-0.64, -0.02, 0.00, 0.00, 0.00],
    [81.85, -0.22, 0.06, 0.02, -0.34],
    [-0.49, -0.04, 0.00, 0.00, 0.00],
    [-0.44, -0.04, 0.00, 0.00, 0.00],
    [28.44, 0.01, -0.02, 0.02, 0.00],
    [22.93, 0.15, -0.60, 0.23, 0.27],
    [1.03, -0.01, -0.05, -0.06, -0.04],
])

# cells whose 95% interval excluded zero in the published fit
PUBLISHED_HIGHLIGHTED_GAMMA = {
    ("y2", "post_season"), ("y3", "post_season"), ("y6", "post_season"),
    ("y7", "post_season"), ("y10", "forward"), ("y10", "midfielder"), ("y10", "defender"),
}

PUBLISHED_MISSINGNESS = (0.03, 0.03, 0.03, 0.07, 0.03, 0.48, 0.48, 0.44, 0.22, 0.22)

# invented: the free loadings scale the facet trajectories (hundreds of units
# for facet 1, single digits for facet 2) onto each outcome's range
DEFAULT_LOADINGS = (1.0, -0.001, -0.001, -0.0008, 0.1, -0.0008, -0.0008, 1.0, 0.5, -0.02)
# invented: residual standard deviations per outcome
DEFAULT_RESIDUAL_SD = (8.0, 0.05, 0.08, 0.06, 4.0, 0.05, 0.05, 2.0, 2.0, 0.04)

TRUTH_PROVENANCE = {
    "mu_beta": "published posterior mean slopes",
    "alpha": "published posterior means",
    "gamma": "published posterior means",
    "missing": "published missingness proportions",
    "n_subjects": "published cohort size",
    "sigma_beta": "invented: diagonal, sd = 25% of |mu_beta| (floor 0.05)",
    "sigma_eps": "invented: diagonal residual variances",
    "loadings": "invented calibration",
    "design": "invented: semiannual sessions, base age U[10, 18.5), dropout 0.1",
}


@dataclass
class SimulationTruth:
    knots: tuple[float, ...]
    mu_beta: np.ndarray
    sigma_beta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    loadings: np.ndarray
    sigma_eps: np.ndarray
    missing: np.ndarray
    n_subjects: int = 304
    position_probs: tuple[float, ...] = (0.2, 0.3, 0.3, 0.2)
    base_age_range: tuple[float, float] = (10.0, 18.5)
    session_offsets: tuple[float, ...] = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)
    max_age: float = 21.0
    dropout: float = 0.1
    outcomes: tuple[OutcomeSpec, ...] = field(default_factory=default_outcomes)
    seed: int = 0

    def __post_init__(self):
        self.knots = KnotVector(tuple(self.knots)).xi
        for name in ("mu_beta", "sigma_beta", "alpha", "gamma", "loadings", "sigma_eps", "missing"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        D = len(self.outcomes)
        L = len({o.facet for o in self.outcomes})
        q = L * (len(self.knots) + 1)
        shapes = {
            "mu_beta": (q,), "sigma_beta": (q, q), "alpha": (D,), "gamma": (D, 4),
            "loadings": (D,), "sigma_eps": (D, D), "missing": (D,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"truth {name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(self.missing < 0) or np.any(self.missing > 1):
            raise ValueError("missingness probabilities must lie in [0, 1]")
        if self.n_subjects < 1:
            raise ValueError("need at least one subject")
        if not np.isclose(sum(self.position_probs), 1.0) or len(self.position_probs) != 4:
            raise ValueError("position_probs must be 4 probabilities summing to 1")
        lo, hi = self.base_age_range
        if not (5 < lo < hi <= self.max_age):
            raise ValueError("base age range must lie inside (5, max_age]")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        for d, o in enumerate(self.outcomes):
            if o.fixed and self.loadings[d] != 1.0:
                raise ValueError(f"{o.name} loading is constrained to 1")

    @property
    def facets(self) -> tuple[int, ...]:
        return tuple(sorted({o.facet for o in self.outcomes}))

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for k, v in asdict(self).items():
            if k == "outcomes":
                out[k] = [o.to_dict() for o in self.outcomes]
            elif isinstance(v, np.ndarray):
                out[k] = v.tolist()
            else:
                out[k] = list(v) if isinstance(v, tuple) else v
        out["provenance"] = TRUTH_PROVENANCE
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SimulationTruth":
        raw = {k: v for k, v in raw.items() if k != "provenance"}
        if "outcomes" in raw:
            raw["outcomes"] = tuple(OutcomeSpec(**o) for o in raw["outcomes"])
        for k in ("knots", "position_probs", "base_age_range", "session_offsets"):
            if k in raw:
                raw[k] = tuple(raw[k])
        return cls(**raw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SimulationTruth":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _slopes_for(facet: int, n_segments: int) -> list[float]:
    base = list(PUBLISHED_SLOPES[facet])
    return (base + [base[-1]] * n_segments)[:n_segments]


def default_truth(knots: Sequence[float] = DEFAULT_KNOTS, **overrides) -> SimulationTruth:
    """Generating values calibrated to the published fit (304 subjects,
    knots at 12/15/18). For other knot counts the published slopes are
    truncated, or the last one repeated."""
    P = len(knots) + 1
    mu = np.array(_slopes_for(1, P) + _slopes_for(2, P))
    sd = np.maximum(0.25 * np.abs(mu), 0.05)
    truth = dict(
        knots=tuple(knots),
        mu_beta=mu,
        sigma_beta=np.diag(sd**2),
        alpha=PUBLISHED_REGRESSION[:, 0].copy(),
        gamma=PUBLISHED_REGRESSION[:, 1:].copy(),
        loadings=np.array(DEFAULT_LOADINGS),
        sigma_eps=np.diag(np.square(DEFAULT_RESIDUAL_SD)),
        missing=np.array(PUBLISHED_MISSINGNESS),
    )
    truth.update(overrides)
    return SimulationTruth(**truth)


def truth_from_config(raw: Mapping[str, Any] | None, knots=DEFAULT_KNOTS) -> SimulationTruth:
    """Default truth with overrides from a config's ``simulation`` section."""
    raw = dict(raw or {})
    knots = tuple(raw.pop("knots", knots))
    base = default_truth(knots)
    if "outcomes" in raw:
        raw["outcomes"] = tuple(OutcomeSpec(**o) for o in raw["outcomes"])
    for k in ("position_probs", "base_age_range", "session_offsets"):
        if k in raw:
            raw[k] = tuple(raw[k])
    return replace(base, **raw)


def _mvn_rows(mean: np.ndarray, cov: np.ndarray, size: int, rng) -> np.ndarray:
    """Multivariate normal rows via a symmetric square root, so singular
    (including all-zero) covariances are allowed."""
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return mean[None, :] + rng.standard_normal((size, mean.size)) @ root.T


@dataclass
class LatentRecord:
    """Hidden quantities behind a simulated dataset."""

    beta: np.ndarray  # (n, q)
    mean: np.ndarray  # (N, D) model mean at each retained row
    y_star: np.ndarray  # (N, D) latent outcome before rounding and masking
    subject: np.ndarray
    age: np.ndarray


def _schedule(truth: SimulationTruth, rng) -> list[list[tuple[float, int]]]:
    lo, hi = truth.base_age_range
    out = []
    for _ in range(truth.n_subjects):
        base = rng.uniform(lo, hi)
        first_post = int(rng.random() < 0.5)
        visits = []
        for s, off in enumerate(truth.session_offsets):
            age = round(base + off, 3)
            if age >= truth.max_age:
                break
            visits.append((age, (first_post + s) % 2))
            if rng.random() < truth.dropout:
                break
        out.append(visits)
    return out


def gen_cohort(truth: SimulationTruth, rng=None) -> tuple[LongitudinalDataset, LatentRecord]:
    """Draw subjects, session ages, latent growth and outcomes; round counts
    and apply completely-at-random masking per outcome."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(truth.seed if rng is None else int(rng))
    outcomes = truth.outcomes
    facets = truth.facets
    facet_pos = np.array([facets.index(o.facet) for o in outcomes])
    P = len(truth.knots) + 1
    L = len(facets)
    schedule = _schedule(truth, rng)
    positions = rng.choice(len(POSITIONS), size=truth.n_subjects, p=truth.position_probs)
    beta = _mvn_rows(truth.mu_beta, truth.sigma_beta, truth.n_subjects, rng)

    subj = np.array([i for i, v in enumerate(schedule) for _ in v], dtype=int)
    age = np.array([a for v in schedule for a, _ in v])
    post = np.array([p for v in schedule for _, p in v], dtype=int)
    N, D = subj.size, len(outcomes)
    B = basis_matrix(age, truth.knots)
    zeta = np.einsum("nlp,np->nl", beta[subj].reshape(N, L, P), B)
    X = np.zeros((N, 4))
    X[:, 0] = post
    for j in range(3):
        X[:, 1 + j] = positions[subj] == j
    mean = truth.alpha[None, :] + X @ truth.gamma.T + zeta[:, facet_pos] * truth.loadings[None, :]
    y_star = mean + _mvn_rows(np.zeros(D), truth.sigma_eps, N, rng)
    y = y_star.copy()
    for d, o in enumerate(outcomes):
        if o.is_count:
            y[:, d] = round_count(y_star[:, d])
    masked = rng.random((N, D)) < truth.missing[None, :]
    y[masked] = np.nan
    keep = ~np.all(masked, axis=1)

    ids = [f"S{i + 1:03d}" for i in range(truth.n_subjects)]
    observations = []
    occasion_counter: dict[int, int] = {}
    for n in np.flatnonzero(keep):
        i = int(subj[n])
        t = occasion_counter.get(i, 0)
        occasion_counter[i] = t + 1
        observations.append(
            Observation(
                subject_id=ids[i],
                session=str(t + 1),
                age=float(age[n]),
                position=POSITIONS[positions[i]],
                post_season=int(post[n]),
                y=tuple(None if np.isnan(v) else float(v) for v in y[n]),
            )
        )
    dataset = LongitudinalDataset.from_observations(observations, outcomes)
    kept_subjects = sorted({int(subj[n]) for n in np.flatnonzero(keep)}, key=lambda i: i)
    record = LatentRecord(
        beta=beta[kept_subjects],
        mean=mean[keep],
        y_star=y_star[keep],
        subject=np.searchsorted(kept_subjects, subj[keep]),
        age=age[keep],
    )
    return dataset, record
