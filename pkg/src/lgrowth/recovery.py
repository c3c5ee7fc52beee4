"""Scoring a fit against the simulation truth that generated its data."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import COVARIATE_NAMES
from .diagnostics import PosteriorSummary
from .simulator import SimulationTruth


def truth_values(truth: SimulationTruth) -> dict[str, float]:
    """Scalar truth keyed by the parameter names used in draws files.
    Loadings fixed to one are left out."""
    names = [o.name for o in truth.outcomes]
    P = len(truth.knots) + 1
    out: dict[str, float] = {}
    for i, f in enumerate(truth.facets):
        for k in range(P):
            out[f"mu_beta[{f},{k}]"] = float(truth.mu_beta[i * P + k])
    q = truth.mu_beta.size
    for i, j in zip(*np.triu_indices(q)):
        out[f"sigma_beta[{i},{j}]"] = float(truth.sigma_beta[i, j])
    for d, o in enumerate(names):
        out[f"alpha[{o}]"] = float(truth.alpha[d])
        for c, cov in enumerate(COVARIATE_NAMES):
            out[f"gamma[{o},{cov}]"] = float(truth.gamma[d, c])
    for d, spec in enumerate(truth.outcomes):
        if not spec.fixed:
            out[f"loading[{spec.name}]"] = float(truth.loadings[d])
    for i, j in zip(*np.triu_indices(len(names))):
        out[f"sigma_eps[{names[i]},{names[j]}]"] = float(truth.sigma_eps[i, j])
    return out


@dataclass(frozen=True)
class ScoreRow:
    parameter: str
    truth: float
    mean: float
    sd: float
    z: float  # |mean - truth| / sd
    covered: bool  # truth inside the 95% HPD interval


def score(summaries: Sequence[PosteriorSummary] | Mapping[str, PosteriorSummary],
          truth: Mapping[str, float]) -> list[ScoreRow]:
    by_name = summaries if isinstance(summaries, Mapping) else {s.name: s for s in summaries}
    rows = []
    for name, t in truth.items():
        if name not in by_name:
            raise KeyError(f"no posterior summary for {name}")
        s = by_name[name]
        z = abs(s.mean - t) / s.sd if s.sd > 0 else (0.0 if s.mean == t else math.inf)
        rows.append(ScoreRow(name, t, s.mean, s.sd, z, s.hpd_lo <= t <= s.hpd_hi))
    return rows


def coverage(rows: Sequence[ScoreRow], prefix: str | None = None) -> float:
    sel = [r for r in rows if prefix is None or r.parameter.startswith(prefix)]
    if not sel:
        return float("nan")
    return sum(r.covered for r in sel) / len(sel)


def scorecard_csv(rows: Sequence[ScoreRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "truth", "mean", "sd", "abs_z", "hpd_covers_truth"])
    for r in rows:
        w.writerow([r.parameter, format(r.truth, ".10g"), format(r.mean, ".10g"),
                    format(r.sd, ".10g"), format(r.z, ".4f"), str(r.covered).lower()])
    return buf.getvalue()
