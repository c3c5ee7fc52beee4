"""On-disk formats for runs: per-chain draws files and the run manifest.

Every output directory holds one ``manifest.json`` recording the command,
resolved configuration, its hash, the seed, input and output paths with
SHA-256 checksums, and start/finish timestamps.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import shutil
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

MANIFEST_NAME = "manifest.json"
DRAWS_PATTERN = "draws_chain{chain}.csv"


class IntegrityError(OSError):
    """A run directory is incomplete or its files do not match the manifest."""


class OutputExistsError(OSError):
    pass


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    config: dict[str, Any]
    inputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    outputs: dict[str, str] = field(default_factory=dict)  # name relative to dir -> sha256
    started: str = field(default_factory=utc_now)
    finished: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def record_outputs(self, out_dir: str | Path, names: Sequence[str]) -> None:
        out_dir = Path(out_dir)
        for name in names:
            self.outputs[name] = sha256_file(out_dir / name)

    def write(self, out_dir: str | Path) -> Path:
        self.finished = utc_now()
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, run_dir: str | Path) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        if not path.is_file():
            raise IntegrityError(f"{run_dir}: no {MANIFEST_NAME}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
            return cls(**raw)
        except (json.JSONDecodeError, TypeError) as exc:
            raise IntegrityError(f"{path}: unreadable manifest ({exc})") from None


def verify_outputs(run_dir: str | Path, manifest: RunManifest | None = None) -> RunManifest:
    """Check every file listed in the manifest exists and matches its checksum."""
    run_dir = Path(run_dir)
    manifest = manifest or RunManifest.read(run_dir)
    for name, digest in manifest.outputs.items():
        path = run_dir / name
        if not path.is_file():
            raise IntegrityError(f"{path}: listed in manifest but missing")
        actual = sha256_file(path)
        if actual != digest:
            raise IntegrityError(f"{path}: checksum mismatch (manifest {digest[:12]}, file {actual[:12]})")
    return manifest


def prepare_out_dir(out_dir: str | Path, force: bool = False) -> Path:
    """Create ``out_dir``; refuse a non-empty one unless ``force``, in which
    case files from the previous run are removed."""
    out = Path(out_dir)
    if out.exists() and not out.is_dir():
        raise OutputExistsError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()):
        if not force:
            raise OutputExistsError(f"{out} is not empty; pass --force to overwrite")
        for child in out.iterdir():
            if child.is_dir():
                shutil.rmtree(child)
            else:
                child.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ draws


def draws_to_matrix(draws: Mapping[str, np.ndarray], names: Mapping[str, list[str]],
                    export_subjects: Sequence[str] = (), facets=(1, 2), n_basis: int = 4
                    ) -> tuple[list[str], np.ndarray]:
    """Flatten one chain's draws into (column names, (S, n_cols) matrix)."""
    cols, blocks = [], []
    for block, labels in names.items():
        cols.extend(labels)
        blocks.append(np.asarray(draws[block], dtype=float).reshape(-1, len(labels)))
    if export_subjects and "beta_export" in draws:
        be = np.asarray(draws["beta_export"], dtype=float)
        S = be.shape[0]
        for s in export_subjects:
            cols.extend(f"beta[{s},{f},{k}]" for f in facets for k in range(n_basis))
        blocks.append(be.reshape(S, -1))
    return cols, np.hstack(blocks) if blocks else np.zeros((0, 0))


def write_draws(path: str | Path, columns: Sequence[str], matrix: np.ndarray, chain: int = 0) -> None:
    """Long-format CSV with one row per (chain, draw, parameter, value);
    values at full double precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chain", "draw", "parameter", "value"])
    for s_idx, row in enumerate(np.asarray(matrix, dtype=float), start=1):
        w.writerows((chain, s_idx, name, "%.17g" % v) for name, v in zip(columns, row))
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_draws(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Inverse of ``write_draws``: (parameter names in file order,
    (draws, parameters) matrix)."""
    path = Path(path)
    columns: dict[str, int] = {}
    values: list[float] = []
    draws: list[int] = []
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["chain", "draw", "parameter", "value"]:
                raise IntegrityError(f"{path}: not a draws file")
            for line, rec in enumerate(reader, start=2):
                if len(rec) != 4:
                    raise IntegrityError(f"{path}:{line}: expected 4 fields, got {len(rec)}")
                columns.setdefault(rec[2], len(columns))
                draws.append(int(rec[1]))
                values.append(float(rec[3]))
    except ValueError as exc:
        raise IntegrityError(f"{path}: malformed draws ({exc})") from None
    P = len(columns)
    if P == 0:
        return [], np.zeros((0, 0))
    if len(values) % P:
        raise IntegrityError(f"{path}: {len(values)} values do not fill {P} parameters per draw")
    mat = np.asarray(values).reshape(-1, P)
    if np.any(np.asarray(draws).reshape(-1, P) != np.arange(1, mat.shape[0] + 1)[:, None]):
        raise IntegrityError(f"{path}: draws out of order")
    return list(columns), mat
