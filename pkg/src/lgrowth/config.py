"""Fit configuration: knots, outcome taxonomy, prior hyperparameters and
MCMC settings, loadable from JSON with ``LGROWTH_*`` environment overrides."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .data import OutcomeSpec, default_outcomes, validate_outcomes
from .spline import KnotVector

DEFAULT_KNOTS = (12.0, 15.0, 18.0)
ENV_PREFIX = "LGROWTH_"

# blocks that may be held at their initial values (used by validation runs)
UPDATABLE_BLOCKS = frozenset(
    {"beta", "mu_beta", "sigma_beta", "alpha", "gamma", "loadings", "sigma_eps", "shrinkage"}
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PriorConfig:
    iw_df: float = 2.0  # hierarchical inverse-Wishart degrees of freedom
    iw_scale: float = 25.0  # half-t scale A of each marginal sd
    alpha_var: float = 1e3
    loading_mean_accuracy: float = 0.5
    loading_mean_speed: float = -0.5
    loading_var: float = 0.25

    def __post_init__(self):
        if self.iw_df <= 0 or self.iw_scale <= 0:
            raise ConfigError("inverse-Wishart hyperparameters must be positive")
        if self.alpha_var <= 0 or self.loading_var <= 0:
            raise ConfigError("prior variances must be positive")

    def loading_mean(self, spec: OutcomeSpec) -> float:
        return self.loading_mean_accuracy if spec.channel == "accuracy" else self.loading_mean_speed


@dataclass(frozen=True)
class MCMCSettings:
    iterations: int = 20_000
    burn_in: int = 10_000
    thin: int = 10
    chains: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0:
            raise ConfigError("iterations and burn-in must be non-negative")
        if self.burn_in > self.iterations:
            raise ConfigError(f"burn-in {self.burn_in} exceeds iterations {self.iterations}")
        if self.thin < 1:
            raise ConfigError("thinning must be >= 1")
        if self.chains < 1:
            raise ConfigError("at least one chain is required")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass(frozen=True)
class ModelConfig:
    knots: tuple[float, ...] = DEFAULT_KNOTS
    outcomes: tuple[OutcomeSpec, ...] = field(default_factory=default_outcomes)
    priors: PriorConfig = field(default_factory=PriorConfig)
    mcmc: MCMCSettings = field(default_factory=MCMCSettings)
    fixed: frozenset[str] = frozenset()
    initial: Mapping[str, Any] = field(default_factory=dict)
    export_subjects: tuple[str, ...] = ()
    store_latent: bool = False
    init: str = "anchored"
    collapsed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "knots", KnotVector(tuple(self.knots)).xi)
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        try:
            validate_outcomes(self.outcomes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        unknown = self.fixed - UPDATABLE_BLOCKS
        if unknown:
            raise ConfigError(f"unknown blocks in 'fixed': {sorted(unknown)}")
        if self.init not in ("anchored", "simple"):
            raise ConfigError(f"init must be 'anchored' or 'simple', got {self.init!r}")

    @property
    def knot_vector(self) -> KnotVector:
        return KnotVector(self.knots)

    @property
    def facets(self) -> tuple[int, ...]:
        return tuple(sorted({o.facet for o in self.outcomes}))

    @property
    def D(self) -> int:
        return len(self.outcomes)

    def with_mcmc(self, **changes) -> "ModelConfig":
        return replace(self, mcmc=replace(self.mcmc, **changes))

    def to_dict(self) -> dict:
        return {
            "knots": list(self.knots),
            "outcomes": [o.to_dict() for o in self.outcomes],
            "priors": asdict(self.priors),
            "mcmc": asdict(self.mcmc),
            "fixed": sorted(self.fixed),
            "initial": _jsonable(self.initial),
            "export_subjects": list(self.export_subjects),
            "store_latent": self.store_latent,
            "init": self.init,
            "collapsed": self.collapsed,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, Mapping):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_from_dict(raw: Mapping[str, Any]) -> ModelConfig:
    known = {"knots", "outcomes", "priors", "mcmc", "fixed", "initial", "export_subjects",
             "store_latent", "init", "collapsed", "simulation"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
    kwargs: dict[str, Any] = {}
    try:
        if "knots" in raw:
            kwargs["knots"] = tuple(float(k) for k in raw["knots"])
        if "outcomes" in raw:
            kwargs["outcomes"] = tuple(OutcomeSpec(**o) for o in raw["outcomes"])
        if "priors" in raw:
            kwargs["priors"] = PriorConfig(**raw["priors"])
        if "mcmc" in raw:
            kwargs["mcmc"] = MCMCSettings(**raw["mcmc"])
        if "fixed" in raw:
            kwargs["fixed"] = frozenset(raw["fixed"])
        if "initial" in raw:
            kwargs["initial"] = dict(raw["initial"])
        if "export_subjects" in raw:
            kwargs["export_subjects"] = tuple(str(s) for s in raw["export_subjects"])
        if "init" in raw:
            kwargs["init"] = str(raw["init"])
        if "collapsed" in raw:
            kwargs["collapsed"] = bool(raw["collapsed"])
        if "store_latent" in raw:
            kwargs["store_latent"] = bool(raw["store_latent"])
        return ModelConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    """MCMC settings from ``LGROWTH_ITERATIONS``, ``LGROWTH_BURNIN``,
    ``LGROWTH_THIN``, ``LGROWTH_CHAINS`` and ``LGROWTH_SEED``."""
    environ = os.environ if environ is None else environ
    names = {"ITERATIONS": "iterations", "BURNIN": "burn_in", "THIN": "thin",
             "CHAINS": "chains", "SEED": "seed"}
    out = {}
    for suffix, key in names.items():
        val = environ.get(ENV_PREFIX + suffix)
        if val is not None and val != "":
            try:
                out[key] = int(val)
            except ValueError:
                raise ConfigError(f"{ENV_PREFIX}{suffix}={val!r} is not an integer") from None
    return out


def load_config(path: str | Path | None = None, environ=None, **cli_overrides) -> tuple[ModelConfig, dict]:
    """Resolve file < environment < command line. Returns the config and the
    raw JSON mapping (which may carry a ``simulation`` section)."""
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    cfg = config_from_dict(raw)
    mcmc = env_overrides(environ)
    mcmc.update({k: v for k, v in cli_overrides.items() if v is not None})
    if mcmc:
        try:
            cfg = cfg.with_mcmc(**mcmc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    return cfg, raw
