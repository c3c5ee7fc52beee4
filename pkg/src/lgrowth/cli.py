"""``lgrowth`` command line: simulate, fit, recover, report, summarize.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, ModelConfig, config_from_dict, env_overrides, load_config
from .data import DataError, LongitudinalDataset, parse_dataset, summarize, summary_to_csv, write_dataset
from .gibbs import EngineError, GibbsModel, parameter_names, run_chains
from .recovery import coverage, score, scorecard_csv, truth_values
from .report import stack_chains, summaries, summary_csv, write_report
from .simulator import gen_cohort, truth_from_config
from .storage import (
    DRAWS_PATTERN,
    RunManifest,
    draws_to_matrix,
    prepare_out_dir,
    read_draws,
    sha256_file,
    verify_outputs,
    write_draws,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("lgrowth")


def _mcmc_flags(args) -> dict:
    return {"seed": args.seed, "chains": getattr(args, "chains", None),
            "iterations": getattr(args, "iterations", None),
            "burn_in": getattr(args, "burnin", None), "thin": getattr(args, "thin", None)}


def _resolve(args) -> tuple[ModelConfig, dict]:
    return load_config(args.config, **_mcmc_flags(args))


def _simulation_seed(args, raw: dict) -> int:
    """Seed precedence: simulation section < LGROWTH_SEED < --seed."""
    if args.seed is not None:
        return int(args.seed)
    env = env_overrides()
    if "seed" in env:
        return env["seed"]
    return int(raw.get("simulation", {}).get("seed", raw.get("mcmc", {}).get("seed", 0)))


def _simulate_into(out: Path, cfg: ModelConfig, raw: dict, seed: int) -> tuple[LongitudinalDataset, object]:
    sim = dict(raw.get("simulation", {}))
    sim["seed"] = seed
    truth = truth_from_config(sim, knots=cfg.knots)
    dataset, _ = gen_cohort(truth)
    write_dataset(dataset, out / "data.csv")
    truth.save(out / "truth.json")
    return dataset, truth


def _fit_into(out: Path, dataset: LongitudinalDataset, cfg: ModelConfig, threads: int) -> dict:
    """Run the chains and write draws files plus summary.csv; returns the
    stacked draws keyed by column name."""
    model = GibbsModel(dataset, cfg)
    names = parameter_names(model)
    chains = run_chains(dataset, cfg, threads=threads)
    columns, mats = None, []
    for ch in chains:
        columns, mat = draws_to_matrix(ch.draws, names, cfg.export_subjects, model.facets, model.P)
        write_draws(out / DRAWS_PATTERN.format(chain=ch.chain), columns, mat, ch.chain)
        mats.append(mat)
        log.info("chain %d: %d draws in %.1f s", ch.chain, mat.shape[0], ch.meta["elapsed_seconds"])
    # summaries are computed from the written files so fit and report agree exactly
    mats = [read_draws(out / DRAWS_PATTERN.format(chain=ch.chain))[1] for ch in chains]
    draws = stack_chains(columns, mats)
    if mats[0].shape[0] >= 20:
        (out / "summary.csv").write_text(summary_csv(summaries(draws)), encoding="utf-8")
    return draws


def _fit_outputs(out: Path, cfg: ModelConfig) -> list[str]:
    names = [DRAWS_PATTERN.format(chain=k) for k in range(cfg.mcmc.chains)]
    return names + [n for n in ("summary.csv",) if (out / n).exists()]


def cmd_simulate(args) -> int:
    cfg, raw = _resolve(args)
    seed = _simulation_seed(args, raw)
    out = prepare_out_dir(args.out, args.force)
    manifest = RunManifest("simulate", cfg.hash(), seed, cfg.to_dict(),
                           inputs=_inputs(args.config))
    dataset, truth = _simulate_into(out, cfg, raw, seed)
    manifest.record_outputs(out, ["data.csv", "truth.json"])
    manifest.extra = {"n_subjects": dataset.n_subjects, "n_rows": dataset.n_rows}
    manifest.write(out)
    print(f"simulated {dataset.n_subjects} subjects, {dataset.n_rows} sessions -> {out}")
    return EXIT_OK


def _inputs(*paths) -> dict[str, str]:
    return {str(p): sha256_file(p) for p in paths if p is not None}


def cmd_fit(args) -> int:
    cfg, _ = _resolve(args)
    dataset = parse_dataset(Path(args.data), cfg.outcomes)
    out = prepare_out_dir(args.out, args.force)
    manifest = RunManifest("fit", cfg.hash(), cfg.mcmc.seed, cfg.to_dict(),
                           inputs=_inputs(args.data, args.config))
    shutil.copyfile(args.data, out / "data.csv")
    _fit_into(out, dataset, cfg, args.threads)
    manifest.record_outputs(out, ["data.csv", *_fit_outputs(out, cfg)])
    manifest.write(out)
    print(f"fit {cfg.mcmc.chains} chain(s) x {cfg.mcmc.n_draws} draws -> {out}")
    return EXIT_OK


def cmd_recover(args) -> int:
    cfg, raw = _resolve(args)
    seed = _simulation_seed(args, raw)
    out = prepare_out_dir(args.out, args.force)
    manifest = RunManifest("recover", cfg.hash(), seed, cfg.to_dict(), inputs=_inputs(args.config))
    dataset, truth = _simulate_into(out, cfg, raw, seed)
    draws = _fit_into(out, dataset, cfg, args.threads)
    rows = score(summaries(draws), truth_values(truth))
    (out / "scorecard.csv").write_text(scorecard_csv(rows), encoding="utf-8")
    manifest.record_outputs(out, ["data.csv", "truth.json", *_fit_outputs(out, cfg), "scorecard.csv"])
    cov_all, cov_mu = coverage(rows), coverage(rows, "mu_beta")
    manifest.extra = {"coverage": cov_all, "coverage_mu_beta": cov_mu}
    manifest.write(out)
    print(f"95% HPD coverage: {cov_all:.3f} over {len(rows)} parameters; "
          f"mu_beta {cov_mu:.3f}; max |z| {max(r.z for r in rows):.2f}")
    return EXIT_OK


def cmd_report(args) -> int:
    fit_dir = Path(args.fit_dir)
    manifest = verify_outputs(fit_dir)
    if manifest.command not in ("fit", "recover"):
        raise ConfigError(f"{fit_dir} holds a '{manifest.command}' run, not a fit")
    cfg = config_from_dict(manifest.config)
    draw_files = sorted(n for n in manifest.outputs if n.startswith("draws_chain"))
    if not draw_files:
        raise ConfigError(f"{fit_dir}: manifest lists no draws files")
    dataset = parse_dataset(fit_dir / "data.csv", cfg.outcomes)
    columns, mats = None, []
    for name in draw_files:
        cols, mat = read_draws(fit_dir / name)
        if columns is not None and cols != columns:
            raise ConfigError(f"{name}: columns differ from the first chain")
        columns = cols
        mats.append(mat)
    out = prepare_out_dir(args.out or fit_dir / "report", args.force)
    written = write_report(out, stack_chains(columns, mats), dataset, cfg.knots, cfg.facets,
                           cfg.export_subjects)
    rep = RunManifest("report", cfg.hash(), manifest.seed, cfg.to_dict(),
                      inputs={str(fit_dir / n): d for n, d in sorted(manifest.outputs.items())})
    rep.record_outputs(out, written)
    rep.write(out)
    print(f"report: {len(written)} files -> {out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    cfg, _ = _resolve(args)
    dataset = parse_dataset(Path(args.data), cfg.outcomes)
    text = summary_to_csv(summarize(dataset))
    if args.out:
        out = Path(args.out)
        if out.exists() and not args.force:
            raise FileExistsError(f"{out} exists; pass --force to overwrite")
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lgrowth", description="Bayesian latent growth curves for "
                                "longitudinal multi-outcome cognitive data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="random seed (overrides config and LGROWTH_SEED)")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output")

    def mcmc(sp):
        sp.add_argument("--chains", type=int)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--burnin", type=int)
        sp.add_argument("--thin", type=int)
        sp.add_argument("--threads", type=int, default=1, help="worker processes for chains")

    sp = sub.add_parser("simulate", help="generate a synthetic cohort")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="run the Gibbs sampler on a dataset")
    sp.add_argument("data", help="input CSV")
    common(sp)
    mcmc(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("recover", help="simulate, fit and score against the truth")
    common(sp)
    mcmc(sp)
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("report", help="write the report bundle for a fit directory")
    sp.add_argument("fit_dir")
    sp.add_argument("--out", help="report directory (default: <fit_dir>/report)")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("summarize", help="per-outcome observation counts and missingness")
    sp.add_argument("data", help="input CSV")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    sp.add_argument("--out", help="write CSV here instead of stdout")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_summarize)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DataError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
