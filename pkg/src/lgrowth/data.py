"""Longitudinal multi-outcome panel data: outcome taxonomy, CSV ingestion,
covariate encoding and missingness summaries.

The CSV layout is long format, one row per (subject, session)::

    subject_id,session,age,position,post_season,y1,...,yD

Empty cells are missing outcomes. Counts must be non-negative integers; speed
outcomes are expected to be on the log scale already.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

POSITIONS = ("forward", "midfielder", "defender", "goalkeeper")
COVARIATE_NAMES = ("post_season", "forward", "midfielder", "defender")
BASE_COLUMNS = ("subject_id", "session", "age", "position", "post_season")
AGE_BOUNDS = (5.0, 40.0)


class DataError(ValueError):
    """Raised for malformed or inconsistent panel data."""


@dataclass(frozen=True)
class OutcomeSpec:
    index: int
    label: str
    kind: str  # "count" | "continuous"
    channel: str  # "accuracy" | "speed"
    facet: int  # 1 = domain-generic, 2 = domain-specific
    loading_constraint: str = "free"  # "fixed_to_one" | "free"

    def __post_init__(self):
        if self.kind not in ("count", "continuous"):
            raise ValueError(f"unknown outcome kind {self.kind!r}")
        if self.channel not in ("accuracy", "speed"):
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.loading_constraint not in ("fixed_to_one", "free"):
            raise ValueError(f"unknown loading constraint {self.loading_constraint!r}")

    @property
    def name(self) -> str:
        return f"y{self.index}"

    @property
    def is_count(self) -> bool:
        return self.kind == "count"

    @property
    def fixed(self) -> bool:
        return self.loading_constraint == "fixed_to_one"

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "label": self.label,
            "kind": self.kind,
            "channel": self.channel,
            "facet": self.facet,
            "loading_constraint": self.loading_constraint,
        }


_DEFAULT_LABELS = (
    "determination: correct answers",
    "determination: log median response time",
    "response inhibition: log SSRT",
    "response inhibition: log mean response time",
    "response inhibition: correct answers",
    "choice response: log mean response time (congruent)",
    "choice response: log mean response time (incongruent)",
    "helix: correct answers",
    "footbonaut: correct answers",
    "footbonaut: log mean response time",
)


def default_outcomes() -> tuple[OutcomeSpec, ...]:
    """The ten-outcome battery: counts y1,y5,y8,y9; log speeds elsewhere;
    y1..y7 load on facet 1, y8..y10 on facet 2; y1 and y8 anchor the scale."""
    counts = {1, 5, 8, 9}
    specs = []
    for d, label in enumerate(_DEFAULT_LABELS, start=1):
        specs.append(
            OutcomeSpec(
                index=d,
                label=label,
                kind="count" if d in counts else "continuous",
                channel="accuracy" if d in counts else "speed",
                facet=1 if d <= 7 else 2,
                loading_constraint="fixed_to_one" if d in (1, 8) else "free",
            )
        )
    return tuple(specs)


def validate_outcomes(outcomes: Sequence[OutcomeSpec]) -> None:
    idx = [o.index for o in outcomes]
    if idx != list(range(1, len(outcomes) + 1)):
        raise ValueError(f"outcome indices must be 1..D in order, got {idx}")
    for facet in sorted({o.facet for o in outcomes}):
        n_fixed = sum(o.fixed for o in outcomes if o.facet == facet)
        if n_fixed != 1:
            raise ValueError(
                f"facet {facet} has {n_fixed} loadings fixed to one, expected exactly 1"
            )


@dataclass(frozen=True)
class Observation:
    subject_id: str
    session: str
    age: float
    position: str
    post_season: int
    y: tuple[float | None, ...]
    occasion: int = 0


def encode_covariates(obs: Observation) -> np.ndarray:
    """(post_season, forward, midfielder, defender); goalkeeper is the reference."""
    if obs.position not in POSITIONS:
        raise DataError(f"unknown position {obs.position!r}")
    if obs.post_season not in (0, 1):
        raise DataError(f"post_season must be 0 or 1, got {obs.post_season!r}")
    x = np.zeros(4)
    x[0] = obs.post_season
    if obs.position != "goalkeeper":
        x[1 + POSITIONS.index(obs.position)] = 1.0
    return x


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Immutable panel. Rows are sorted by subject (first-appearance order)
    and then by age; ``occasion`` is the 0-based rank of the age within a
    subject."""

    subject_ids: tuple[str, ...]
    subject: np.ndarray  # (N,) int index into subject_ids
    occasion: np.ndarray  # (N,) int
    session: tuple[str, ...]
    age: np.ndarray  # (N,)
    position: tuple[str, ...]
    post_season: np.ndarray  # (N,) int
    y: np.ndarray  # (N, D) float, nan where missing
    outcomes: tuple[OutcomeSpec, ...] = field(default_factory=default_outcomes)

    def __post_init__(self):
        for name in ("subject", "occasion", "age", "post_season", "y"):
            getattr(self, name).setflags(write=False)

    @property
    def mask(self) -> np.ndarray:
        """True where an outcome is absent."""
        return np.isnan(self.y)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    @property
    def D(self) -> int:
        return self.y.shape[1]

    def covariates(self) -> np.ndarray:
        """(N, 4) design of post-season flag and position dummies."""
        x = np.zeros((self.n_rows, 4))
        x[:, 0] = self.post_season
        pos = np.asarray(self.position)
        for j, p in enumerate(POSITIONS[:3], start=1):
            x[:, j] = pos == p
        return x

    def observations(self) -> list[Observation]:
        out = []
        for n in range(self.n_rows):
            y = tuple(None if math.isnan(v) else float(v) for v in self.y[n])
            out.append(
                Observation(
                    subject_id=self.subject_ids[self.subject[n]],
                    session=self.session[n],
                    age=float(self.age[n]),
                    position=self.position[n],
                    post_season=int(self.post_season[n]),
                    y=y,
                    occasion=int(self.occasion[n]),
                )
            )
        return out

    def rows_for(self, subject_id: str) -> np.ndarray:
        return np.flatnonzero(self.subject == self.subject_ids.index(subject_id))

    @classmethod
    def from_observations(
        cls, observations: Iterable[Observation], outcomes: Sequence[OutcomeSpec] | None = None
    ) -> "LongitudinalDataset":
        outcomes = tuple(outcomes) if outcomes is not None else default_outcomes()
        validate_outcomes(outcomes)
        by_subject: dict[str, list[Observation]] = {}
        for obs in observations:
            by_subject.setdefault(obs.subject_id, []).append(obs)
        rows: list[Observation] = []
        subj_idx: list[int] = []
        occ: list[int] = []
        for i, (sid, obs_list) in enumerate(by_subject.items()):
            obs_list = sorted(obs_list, key=lambda o: o.age)
            for a, b in zip(obs_list, obs_list[1:]):
                if not b.age > a.age:
                    raise DataError(f"subject {sid}: repeated age {b.age}")
            for t, o in enumerate(obs_list):
                rows.append(o)
                subj_idx.append(i)
                occ.append(t)
        D = len(outcomes)
        y = np.full((len(rows), D), np.nan)
        for n, o in enumerate(rows):
            if len(o.y) != D:
                raise DataError(f"observation has {len(o.y)} outcomes, expected {D}")
            y[n] = [np.nan if v is None else v for v in o.y]
        return cls(
            subject_ids=tuple(by_subject),
            subject=np.asarray(subj_idx, dtype=int),
            occasion=np.asarray(occ, dtype=int),
            session=tuple(o.session for o in rows),
            age=np.asarray([o.age for o in rows], dtype=float),
            position=tuple(o.position for o in rows),
            post_season=np.asarray([o.post_season for o in rows], dtype=int),
            y=y,
            outcomes=outcomes,
        )


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def parse_dataset(
    source: str | Path | io.TextIOBase, outcomes: Sequence[OutcomeSpec] | None = None
) -> LongitudinalDataset:
    """Read and validate the long-format CSV.

    ``source`` may be a path, an open text stream, or the CSV text itself.
    Errors name the 1-based line number of the offending row (header is
    line 1). Rows with every outcome missing are dropped.
    """
    outcomes = tuple(outcomes) if outcomes is not None else default_outcomes()
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_dataset(fh, outcomes)
    stream = io.StringIO(source) if isinstance(source, str) else source
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty input") from None
    y_cols = [h for h in header if h not in BASE_COLUMNS]
    expected_y = [f"y{d}" for d in range(1, len(outcomes) + 1)]
    if y_cols != expected_y:
        raise DataError(
            f"outcome columns {y_cols} do not match the {len(outcomes)} configured "
            f"outcomes {expected_y}"
        )
    missing_base = [c for c in BASE_COLUMNS if c not in header]
    if missing_base:
        raise DataError(f"missing columns: {missing_base}")
    col = {h: j for j, h in enumerate(header)}
    seen: set[tuple[str, str]] = set()
    observations = []
    n_dropped = 0
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"row {line}: expected {len(header)} fields, got {len(row)}")
        cell = {h: row[j].strip() for h, j in col.items()}
        sid, session = cell["subject_id"], cell["session"]
        if not sid:
            raise DataError(f"row {line}: empty subject_id")
        if (sid, session) in seen:
            raise DataError(f"row {line}: duplicate key (subject {sid!r}, session {session!r})")
        seen.add((sid, session))
        try:
            age = float(cell["age"])
        except ValueError:
            raise DataError(f"row {line}: age {cell['age']!r} is not a number") from None
        if not (AGE_BOUNDS[0] < age < AGE_BOUNDS[1]):
            raise DataError(f"row {line}: age {age} outside {AGE_BOUNDS}")
        position = cell["position"]
        if position not in POSITIONS:
            raise DataError(f"row {line}: unknown position {position!r}")
        if cell["post_season"] not in ("0", "1"):
            raise DataError(f"row {line}: post_season {cell['post_season']!r} must be 0 or 1")
        values: list[float | None] = []
        for spec in outcomes:
            raw = cell[spec.name]
            if raw == "":
                values.append(None)
                continue
            try:
                v = float(raw)
            except ValueError:
                raise DataError(f"row {line}: {spec.name}={raw!r} is not a number") from None
            if not math.isfinite(v):
                raise DataError(f"row {line}: {spec.name}={raw!r} is not finite")
            if spec.is_count and (v < 0 or not v.is_integer()):
                raise DataError(
                    f"row {line}: count {spec.name}={raw!r} must be a non-negative integer"
                )
            values.append(v)
        if all(v is None for v in values):
            n_dropped += 1
            continue
        observations.append(
            Observation(sid, session, age, position, int(cell["post_season"]), tuple(values))
        )
    if n_dropped:
        log.warning("dropped %d rows with no observed outcome", n_dropped)
    try:
        return LongitudinalDataset.from_observations(observations, outcomes)
    except DataError as exc:
        raise DataError(str(exc)) from None


def dataset_to_csv(dataset: LongitudinalDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(BASE_COLUMNS) + [o.name for o in dataset.outcomes])
    for n in range(dataset.n_rows):
        writer.writerow(
            [
                dataset.subject_ids[dataset.subject[n]],
                dataset.session[n],
                repr(float(dataset.age[n])),
                dataset.position[n],
                int(dataset.post_season[n]),
                *(_fmt(v) for v in dataset.y[n]),
            ]
        )
    return buf.getvalue()


def write_dataset(dataset: LongitudinalDataset, path: str | Path) -> None:
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8")


@dataclass(frozen=True)
class OutcomeSummary:
    outcome: str
    label: str
    mean_obs_per_subject: float
    missing_proportion: float


def summarize(dataset: LongitudinalDataset) -> list[OutcomeSummary]:
    """Mean observations per subject and missing proportion for each outcome,
    where a session with no value for the outcome counts as missing."""
    if dataset.n_rows == 0 or dataset.n_subjects == 0:
        raise DataError("cannot summarize an empty dataset")
    observed = ~dataset.mask
    return [
        OutcomeSummary(
            outcome=spec.name,
            label=spec.label,
            mean_obs_per_subject=float(observed[:, d].sum() / dataset.n_subjects),
            missing_proportion=float(1.0 - observed[:, d].mean()),
        )
        for d, spec in enumerate(dataset.outcomes)
    ]


def summary_to_csv(rows: Sequence[OutcomeSummary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variable", "outcome", "mean_obs_per_player", "missing_proportion"])
    for r in rows:
        writer.writerow([r.outcome, r.label, f"{r.mean_obs_per_subject:.2f}", f"{r.missing_proportion:.2f}"])
    return buf.getvalue()


def bundled_dataset_path(name: str = "tiny") -> Path:
    """Path of a small simulated dataset shipped with the package."""
    from importlib.resources import files

    return Path(str(files("lgrowth") / "datasets" / f"{name}.csv"))
