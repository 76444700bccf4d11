"""Experiment configuration: typed parameter tables, key=value files, overrides.

Precedence, lowest first: built-in defaults, the ``--config`` file, the
``METASTEP_SEED`` environment variable (seed only), explicit CLI flags.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from metastep.parallel import resolve_threads

SEED_ENV = "METASTEP_SEED"


class Experiment(enum.Enum):
    QUAD_META_TRAIN = "quad-meta-train"
    QUAD_SWEEP_T = "quad-sweep-t"
    LS_COMPARE = "ls-compare"
    LS_LARGE_SAMPLE = "ls-large-sample"
    LS_SGD_COMPARE = "ls-sgd-compare"


class ConfigError(ValueError):
    pass


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float_list(s) -> Tuple[float, ...]:
    if isinstance(s, (list, tuple)):
        return tuple(float(x) for x in s)
    return tuple(float(x) for x in str(s).split(",") if x.strip())


def _int_list(s) -> Tuple[int, ...]:
    if isinstance(s, (list, tuple)):
        return tuple(int(x) for x in s)
    return tuple(int(x) for x in str(s).split(",") if x.strip())


def _choice(*options: str) -> Callable[[Any], str]:
    def parse(s):
        v = str(s).strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v

    return parse


# name -> (parser, default, help)
_LS_GRID = {
    "grid_lo": (float, 1e-6, "smallest grid step size"),
    "grid_hi": (float, 1.0, "largest grid step size"),
    "grid_points": (int, 25, "number of grid points"),
    "grid_scale": (_choice("log", "linear"), "log", "grid spacing"),
    "trunc_multiplier": (float, 40.0, "freeze the iterate once its norm reaches this multiple of sigma"),
}

PARAMS: Dict[Experiment, Dict[str, tuple]] = {
    Experiment.QUAD_META_TRAIN: {
        "dim": (int, 20, "task dimension"),
        "unroll": (int, 80, "inner GD steps t"),
        "eta0": (float, 0.1, "initial step size"),
        "steps": (int, 1000, "meta-GD steps K"),
        "step_const": (float, 0.01, "meta step mu_k = c / sqrt(k)"),
        "method": (_choice("log-stable", "log-naive-backprop", "plain-closed"), "log-stable", "meta-gradient"),
        "grid_points": (int, 10_000, "points in the reference grid"),
    },
    Experiment.QUAD_SWEEP_T: {
        "dim": (int, 20, "task dimension"),
        "unroll_list": (_int_list, (10, 20, 40, 80), "comma-separated unroll lengths"),
        "grid_points": (int, 10_000, "points in the log grid over the widened bracket"),
    },
    Experiment.LS_COMPARE: {
        "dim": (int, 100, "task dimension"),
        "n_list": (_int_list, (50,), "comma-separated sample budgets n"),
        "sigma_list": (_float_list, (1.0, 2.0, 4.0), "comma-separated noise levels"),
        "unroll": (int, 40, "inner GD steps t"),
        "num_tasks": (int, 50, "training tasks m"),
        "test_tasks": (int, 10, "fresh tasks K for evaluation"),
        "valid_fraction": (float, 0.5, "share of n used as the validation split"),
        **_LS_GRID,
    },
    Experiment.LS_LARGE_SAMPLE: {
        "dim": (int, 20, "task dimension"),
        "n": (int, 2000, "training samples per task"),
        "sigma": (float, 1.0, "noise level"),
        "unroll": (int, 60, "inner GD steps t"),
        "num_tasks": (int, 100, "training tasks m"),
        "test_tasks": (int, 200, "fresh tasks K for evaluation"),
        **_LS_GRID,
    },
    Experiment.LS_SGD_COMPARE: {
        "dim": (int, 20, "task dimension"),
        "n": (int, 10, "sample budget n"),
        "sigma": (float, 1.0, "noise level"),
        "unroll": (int, 200, "inner SGD steps t"),
        "num_tasks": (int, 20, "training tasks m"),
        "test_tasks": (int, 10, "fresh tasks K for evaluation"),
        "replicas": (int, 64, "SGD trajectories per task R"),
        "valid_fraction": (float, 0.5, "share of n used as the validation split"),
        "feasible_grid": (_bool, True, "cap each grid at its SGD feasible step size"),
        "grid_span": (float, 1e-4, "lo/hi ratio of the feasible-range grid"),
        "c5": (float, 1.0, "constant in the TbV-SGD feasible range"),
        "variance_draws": (int, 64, "groups used for the R=1 vs R=replicas spread check"),
        **_LS_GRID,
        "grid_points": (int, 13, "number of grid points"),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment
    params: Mapping[str, Any] = field(default_factory=dict)
    master_seed: int = 0
    output_path: Optional[str] = None
    threads: Any = 1

    def __post_init__(self):
        exp = Experiment(self.experiment)
        object.__setattr__(self, "experiment", exp)
        table = PARAMS[exp]
        unknown = set(self.params) - set(table)
        if unknown:
            raise ConfigError(f"unknown parameter(s) for {exp.value}: {', '.join(sorted(unknown))}")
        merged = {}
        for name, (parse, default, _help) in table.items():
            raw = self.params.get(name, default)
            try:
                merged[name] = parse(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from None
        object.__setattr__(self, "params", merged)
        try:
            resolve_threads(self.threads)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def __getitem__(self, name: str):
        return self.params[name]


def read_config_file(path) -> Dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out: Dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{ln}: empty key")
            out[key.replace("-", "_")] = value
    return out


def build_config(
    experiment,
    file_values: Optional[Mapping[str, str]] = None,
    flag_values: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """Merge the configuration layers into one validated config."""
    env = os.environ if env is None else env
    layered: Dict[str, Any] = {}
    layered.update(file_values or {})
    if env.get(SEED_ENV):
        layered["seed"] = env[SEED_ENV]
    layered.update({k: v for k, v in (flag_values or {}).items() if v is not None})

    seed = layered.pop("seed", 0)
    out = layered.pop("out", None)
    threads = layered.pop("threads", 1)
    try:
        seed = int(seed)
    except ValueError:
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None
    if threads != "auto":
        try:
            threads = int(threads)
        except ValueError:
            raise ConfigError(f"threads must be an integer or 'auto', got {threads!r}") from None
    return ExperimentConfig(Experiment(experiment), layered, seed, out, threads)
