"""Report bundle: summary, trajectory bands (CSV and SVG), covariate table,
Spearman matrix and optional per-subject trajectories.

All writers are deterministic functions of their inputs so that rerunning a
report over the same fit directory reproduces identical bytes.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import COVARIATE_NAMES, LongitudinalDataset
from .diagnostics import (
    PosteriorSummary,
    TrajectoryBand,
    covariate_table,
    default_age_grid,
    hpd_interval,
    spearman_matrix,
    summarize_parameter,
    trajectory_band,
)
from .spline import basis_matrix


def _num(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return format(float(v), ".10g")


def stack_chains(columns: Sequence[str], matrices: Sequence[np.ndarray]) -> dict[str, np.ndarray]:
    """Map column name -> (chains, draws) array; chains must be equally long."""
    lengths = {m.shape[0] for m in matrices}
    if len(lengths) != 1:
        raise ValueError(f"chains have unequal lengths {sorted(lengths)}")
    cube = np.stack(matrices)  # (m, S, P)
    return {c: cube[:, :, j] for j, c in enumerate(columns)}


def summaries(draws: Mapping[str, np.ndarray], level: float = 0.95) -> list[PosteriorSummary]:
    return [summarize_parameter(k, v, level) for k, v in draws.items() if not k.startswith("beta[")]


def summary_csv(rows: Sequence[PosteriorSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "mean", "sd", "hpd_lo", "hpd_hi", "ess", "rhat"])
    for s in rows:
        w.writerow([s.name, _num(s.mean), _num(s.sd), _num(s.hpd_lo), _num(s.hpd_hi),
                    _num(s.ess), _num(s.rhat)])
    return buf.getvalue()


def trajectory_csv(band: TrajectoryBand) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["age", "mean", "hpd_lo", "hpd_hi"])
    for a, m, lo, hi in zip(band.ages, band.mean, band.lower, band.upper):
        w.writerow([_num(a), _num(m), _num(lo), _num(hi)])
    return buf.getvalue()


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo if hi > lo else 1.0
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def trajectory_svg(band: TrajectoryBand, title: str | None = None,
                   width: int = 640, height: int = 400) -> str:
    """Static line plot: HPD band as a filled polygon, posterior mean as a line."""
    ml, mr, mt, mb = 70, 20, 40, 50
    ages = band.ages
    ylo = float(min(band.lower.min(), band.mean.min()))
    yhi = float(max(band.upper.max(), band.mean.max()))
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    x0, x1 = float(ages.min()), float(ages.max())

    def sx(a):
        return ml + (a - x0) / (x1 - x0 if x1 > x0 else 1.0) * (width - ml - mr)

    def sy(v):
        return height - mb - (v - ylo) / (yhi - ylo) * (height - mt - mb)

    def pts(xs, ys):
        return " ".join(f"{sx(a):.2f},{sy(v):.2f}" for a, v in zip(xs, ys))

    title = title or f"Facet {band.facet}: population trajectory with 95% HPD band"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
        f'<polygon points="{pts(np.r_[ages, ages[::-1]], np.r_[band.upper, band.lower[::-1]])}" '
        'fill="#9ecae1" fill-opacity="0.6" stroke="none"/>',
        f'<polyline points="{pts(ages, band.mean)}" fill="none" stroke="#08519c" stroke-width="2"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
    ]
    for a in _ticks(x0, x1, 11):
        out.append(f'<line x1="{sx(a):.2f}" y1="{height - mb}" x2="{sx(a):.2f}" '
                   f'y2="{height - mb + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(a):.2f}" y="{height - mb + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{a:g}</text>')
    for v in _ticks(ylo, yhi):
        out.append(f'<line x1="{ml - 5}" y1="{sy(v):.2f}" x2="{ml}" y2="{sy(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{sy(v) + 4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{v:g}</text>')
    out.append(f'<text x="{(ml + width - mr) / 2:.1f}" y="{height - 12}" text-anchor="middle" '
               'font-family="sans-serif" font-size="12">age (years)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def covariates_csv(rows: Sequence[PosteriorSummary], outcomes: Sequence[str]) -> str:
    table = covariate_table(rows, outcomes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["outcome", "term", "mean", "hpd_excludes_zero"])
    for o in outcomes:
        for term in ("intercept", *COVARIATE_NAMES):
            cell = table[o][term]
            w.writerow([o, term, _num(cell.mean), str(cell.hpd_excludes_zero).lower()])
    return buf.getvalue()


def spearman_csv(matrix: np.ndarray, outcomes: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["", *outcomes])
    for o, row in zip(outcomes, matrix):
        w.writerow([o, *("" if math.isnan(v) else _num(v) for v in row)])
    return buf.getvalue()


def subject_trajectories_csv(draws: Mapping[str, np.ndarray], subjects: Sequence[str],
                             knots, facets: Sequence[int], ages=None, level: float = 0.95) -> str:
    """Posterior mean and HPD of each listed subject's latent curve."""
    ages = default_age_grid() if ages is None else np.asarray(ages, dtype=float)
    B = basis_matrix(ages, knots)
    P = B.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "facet", "age", "mean", "hpd_lo", "hpd_hi"])
    for s in subjects:
        for f in facets:
            cols = [f"beta[{s},{f},{k}]" for k in range(P)]
            beta = np.stack([draws[c].ravel() for c in cols], axis=1)
            curves = beta @ B.T
            for g, a in enumerate(ages):
                c = curves[:, g]
                lo, hi = hpd_interval(c, level) if c.size >= 20 else (c.min(), c.max())
                w.writerow([s, f, _num(a), _num(c.mean()), _num(lo), _num(hi)])
    return buf.getvalue()


def write_report(out_dir: str | Path, draws: Mapping[str, np.ndarray], dataset: LongitudinalDataset,
                 knots, facets: Sequence[int], export_subjects: Sequence[str] = ()) -> list[str]:
    """Write every report artifact into ``out_dir``; returns file names."""
    out = Path(out_dir)
    outcomes = [o.name for o in dataset.outcomes]
    rows = summaries(draws)
    files: dict[str, str] = {"summary.csv": summary_csv(rows)}
    P = len(knots) + 1
    mu_cols = [f"mu_beta[{f},{k}]" for f in facets for k in range(P)]
    mu = np.stack([draws[c].ravel() for c in mu_cols], axis=1)
    for band in trajectory_band(mu, knots, facets=facets):
        files[f"trajectory_{band.facet}.csv"] = trajectory_csv(band)
        files[f"trajectory_{band.facet}.svg"] = trajectory_svg(band)
    files["covariates.csv"] = covariates_csv(rows, outcomes)
    files["spearman.csv"] = spearman_csv(spearman_matrix(dataset), outcomes)
    if export_subjects:
        files["subject_trajectories.csv"] = subject_trajectories_csv(draws, export_subjects, knots, facets)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    return list(files)
