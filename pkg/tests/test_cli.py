import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from lgrowth.cli import main
from lgrowth.data import bundled_dataset_path, parse_dataset
from lgrowth.simulator import SimulationTruth
from lgrowth.storage import (
    IntegrityError, RunManifest, read_draws, verify_outputs, write_draws,
)

TINY = str(bundled_dataset_path())
FAST = ["--chains", "2", "--iterations", "60", "--burnin", "20", "--thin", "1"]


def write_config(tmp_path, **raw) -> str:
    p = tmp_path / "config.json"
    p.write_text(json.dumps(raw))
    return str(p)


def files(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file() and p.name != "manifest.json"}


def test_simulate_default_size_and_manifest(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--seed", "1"]) == 0
    truth = SimulationTruth.load(out / "truth.json")
    assert truth.n_subjects == 304
    data = parse_dataset(out / "data.csv")
    assert data.n_subjects <= 304 and data.n_subjects > 290
    m = verify_outputs(out)
    assert m.command == "simulate" and m.seed == 1 and set(m.outputs) == {"data.csv", "truth.json"}


def test_simulate_seed_determinism_and_force(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--out", str(a), "--seed", "7"]) == 0
    assert main(["simulate", "--out", str(b), "--seed", "7"]) == 0
    assert files(a) == files(b)
    assert main(["simulate", "--out", str(a), "--seed", "7"]) == 4
    assert "--force" in capsys.readouterr().err
    assert main(["simulate", "--out", str(a), "--seed", "8", "--force"]) == 0
    assert files(a)["data.csv"] != files(b)["data.csv"]


def test_simulate_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("LGROWTH_SEED", "7")
    main(["simulate", "--out", str(tmp_path / "env")])
    monkeypatch.delenv("LGROWTH_SEED")
    main(["simulate", "--out", str(tmp_path / "flag"), "--seed", "7"])
    assert files(tmp_path / "env") == files(tmp_path / "flag")


def test_simulate_two_knots(tmp_path):
    cfg = write_config(tmp_path, knots=[12, 15], simulation={"n_subjects": 20})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s"), "--seed", "2"]) == 0
    truth = SimulationTruth.load(tmp_path / "s" / "truth.json")
    assert truth.mu_beta.shape == (6,) and truth.knots == (12.0, 15.0)


def test_invalid_config_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, mcmc={"iterations": 10, "burn_in": 20})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 2
    cfg = write_config(tmp_path, bogus=1)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 2
    assert "bogus" in capsys.readouterr().err


def test_fit_tiny_is_fast_and_reproducible(tmp_path):
    args = ["--iterations", "200", "--burnin", "100", "--thin", "1", "--chains", "1", "--seed", "3"]
    t0 = time.perf_counter()
    assert main(["fit", TINY, "--out", str(tmp_path / "a"), *args]) == 0
    assert time.perf_counter() - t0 < 10
    assert main(["fit", TINY, "--out", str(tmp_path / "b"), *args]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    cols, mat = read_draws(tmp_path / "a" / "draws_chain0.csv")
    assert mat.shape == (100, len(cols)) and "mu_beta[1,0]" in cols
    assert (tmp_path / "a" / "summary.csv").exists()


def test_fit_rejects_outcome_mismatch(tmp_path, capsys):
    rows = (tmp_path / "nine.csv")
    text = Path(TINY).read_text().splitlines()
    header = text[0].split(",")
    drop = header.index("y10")
    rows.write_text("\n".join(",".join(f for i, f in enumerate(l.split(",")) if i != drop)
                              for l in text) + "\n")
    assert main(["fit", str(rows), "--out", str(tmp_path / "f"), *FAST]) == 2
    assert "y10" in capsys.readouterr().err


def test_report_bundle_and_integrity(tmp_path, capsys):
    fit = tmp_path / "fit"
    assert main(["fit", TINY, "--out", str(fit), "--seed", "4", *FAST]) == 0
    assert main(["report", str(fit)]) == 0
    rep = fit / "report"
    names = set(p.name for p in rep.iterdir())
    assert {"trajectory_1.svg", "trajectory_2.svg", "covariates.csv", "spearman.csv",
            "summary.csv", "manifest.json"} <= names
    svg = (rep / "trajectory_1.svg").read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    first = files(rep)
    assert main(["report", str(fit), "--out", str(tmp_path / "rep2")]) == 0
    assert files(tmp_path / "rep2") == first

    draws = fit / "draws_chain1.csv"
    draws.write_bytes(draws.read_bytes()[: draws.stat().st_size // 2])
    assert main(["report", str(fit), "--force"]) == 4
    assert "checksum" in capsys.readouterr().err


def test_report_needs_manifest(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["report", str(tmp_path / "empty")]) == 4


def test_recover_writes_scorecard(tmp_path, capsys):
    cfg = write_config(tmp_path, simulation={"n_subjects": 40})
    out = tmp_path / "rec"
    assert main(["recover", "--config", cfg, "--out", str(out), "--seed", "5", *FAST]) == 0
    with open(out / "scorecard.csv", newline="") as fh:
        card = list(csv.reader(fh))
    assert card[0] == ["parameter", "truth", "mean", "sd", "abs_z", "hpd_covers_truth"]
    assert "mu_beta[1,0]" in [r[0] for r in card]
    assert "coverage" in capsys.readouterr().out
    m = RunManifest.read(out)
    assert 0 <= m.extra["coverage"] <= 1


def test_summarize_stdout(tmp_path, capsys):
    assert main(["summarize", TINY]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "variable,outcome,mean_obs_per_player,missing_proportion" and len(lines) == 11


def test_draws_roundtrip_and_corruption(tmp_path):
    cols = ["a", "gamma[y1,forward]"]
    mat = np.array([[0.1, 1 / 3], [np.pi, -2e-300]])
    write_draws(tmp_path / "d.csv", cols, mat)
    got_cols, got = read_draws(tmp_path / "d.csv")
    assert got_cols == cols
    np.testing.assert_array_equal(got, mat)
    (tmp_path / "bad.csv").write_text("chain,draw,parameter,value\n0,1,a,0.1\n0,1,b\n")
    with pytest.raises(IntegrityError):
        read_draws(tmp_path / "bad.csv")
