"""Experiment configuration: versioned JSON documents parsed into frozen dataclasses.

A document looks like::

    {
      "schema_version": 1,
      "name": "partial-quantization",
      "model": "lrmr_regularized",
      "gen": {"truth": "lowrank", "d1": 50, "d2": 60, "r": 5},
      "n_grid": [1000, 1500, 2000],
      "delta1_grid": [0.0],
      "delta2_grid": [0.0, 0.2],
      "trials": 50,
      "lambda_scale": 1.0
    }

Every key is optional except ``model``. Errors carry the dotted path of the
offending key.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union, get_args, get_origin

from lrmr.solvers import SolverConfig, StepPolicy

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

MODELS = ("lrmr_constrained", "lrmr_regularized", "l2rm", "ols")
TRUTHS = ("lowrank", "demo", "shapes", "matrix")
COVARIATES = ("gaussian", "bernoulli")


class ConfigError(ValueError):
    def __init__(self, message: str, key_path: Optional[str] = None):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path


@dataclass(frozen=True)
class GenConfig:
    """Synthetic truth and data recipe.

    ``truth`` is ``lowrank`` (random ``Theta1 @ Theta2``), ``demo`` (the printed
    block matrices), ``shapes`` (0-1 image blocks, matrix responses only) or
    ``matrix`` (a truth read from ``theta_path``).
    """

    truth: str = "lowrank"
    d1: int = 50
    d2: int = 60
    r: int = 5
    s: int = 4
    p: int = 30
    q: int = 30
    block_rank: int = 2
    shape_size: int = 64
    theta_path: Optional[str] = None
    noise_level: float = 0.1
    noise_as_std: bool = False
    covariates: str = "gaussian"
    fixed_truth: bool = False
    # noise 2e/5 and delta grids read in units of e, the mean |Theta0^T x| entry
    signal_scaled: bool = False

    def __post_init__(self):
        if self.truth not in TRUTHS:
            raise ConfigError(f"unknown truth {self.truth!r}, expected one of {TRUTHS}", "gen.truth")
        if self.covariates not in COVARIATES:
            raise ConfigError(f"unknown covariate family {self.covariates!r}", "gen.covariates")
        for name in ("d1", "d2", "r", "s", "p", "q", "block_rank", "shape_size"):
            if getattr(self, name) < 1:
                raise ConfigError("must be positive", f"gen.{name}")
        if self.r > min(self.d1, self.d2):
            raise ConfigError(f"rank {self.r} exceeds min(d1, d2)", "gen.r")
        if self.block_rank > min(self.p, self.q):
            raise ConfigError(f"rank {self.block_rank} exceeds min(p, q)", "gen.block_rank")
        if self.noise_level < 0:
            raise ConfigError("must be nonnegative", "gen.noise_level")
        if self.truth == "matrix" and not self.theta_path:
            raise ConfigError("a matrix truth needs theta_path", "gen.theta_path")


@dataclass(frozen=True)
class DataConfig:
    """CSV inputs for real-data studies, one sample per column unless ``transpose``."""

    path_x: str
    path_y: str
    transpose: bool = False
    n_test: int = 0

    def __post_init__(self):
        if self.n_test < 0:
            raise ConfigError("must be nonnegative", "data.n_test")


@dataclass(frozen=True)
class SolverSection:
    max_iters: int = 20000
    rel_tol: float = 1e-7
    step: str = "backtracking"
    eta: Optional[float] = None
    eta0: Optional[float] = None
    beta: float = 0.5
    acceleration: bool = True

    def to_solver_config(self) -> SolverConfig:
        try:
            policy = StepPolicy(kind=self.step, eta=self.eta, eta0=self.eta0, beta=self.beta)
            return SolverConfig(
                max_iters=self.max_iters,
                rel_tol=self.rel_tol,
                step_policy=policy,
                acceleration=self.acceleration,
            )
        except ValueError as exc:
            raise ConfigError(str(exc), "solver") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    schema_version: int = SCHEMA_VERSION
    name: str = "experiment"
    gen: GenConfig = field(default_factory=GenConfig)
    data: Optional[DataConfig] = None
    n_grid: Tuple[int, ...] = (1000,)
    delta1_grid: Tuple[float, ...] = (0.0,)
    delta2_grid: Tuple[float, ...] = (0.0,)
    # zip the two delta grids instead of taking their product
    paired_deltas: bool = False
    dither_enabled: bool = True
    trials: int = 50
    base_seed: int = 0
    solver: SolverSection = field(default_factory=SolverSection)
    lambda_scale: float = 1.0
    radius: Optional[float] = None
    record_runtime: bool = False

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema version {self.schema_version}, expected {SCHEMA_VERSION}",
                "schema_version",
            )
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}, expected one of {MODELS}", "model")
        for name in ("n_grid", "delta1_grid", "delta2_grid"):
            if not getattr(self, name):
                raise ConfigError("grid must not be empty", name)
        if any(n < 1 for n in self.n_grid):
            raise ConfigError("sample sizes must be positive", "n_grid")
        for name in ("delta1_grid", "delta2_grid"):
            if any(delta < 0 for delta in getattr(self, name)):
                raise ConfigError("quantization levels must be nonnegative", name)
        if self.paired_deltas and len(self.delta1_grid) != len(self.delta2_grid):
            raise ConfigError("paired grids must have equal length", "delta2_grid")
        if self.trials < 1:
            raise ConfigError("must be at least 1", "trials")
        if self.base_seed < 0:
            raise ConfigError("must be nonnegative", "base_seed")
        if self.lambda_scale <= 0:
            raise ConfigError("must be positive", "lambda_scale")
        if self.radius is not None and self.radius <= 0:
            raise ConfigError("must be positive", "radius")
        if self.model == "l2rm" and self.gen.truth == "matrix":
            raise ConfigError("matrix truths are only available for vector responses", "gen.truth")
        if self.model != "l2rm" and self.gen.truth == "shapes":
            raise ConfigError("shape blocks need the l2rm model", "gen.truth")
        if self.model == "l2rm" and self.gen.signal_scaled:
            raise ConfigError("signal-scaled noise is only available for vector responses", "gen.signal_scaled")
        self.solver.to_solver_config()

    @property
    def delta_pairs(self) -> List[Tuple[float, float]]:
        if self.paired_deltas:
            return list(zip(self.delta1_grid, self.delta2_grid))
        return list(product(self.delta1_grid, self.delta2_grid))

    def cells(self) -> List[Tuple[int, int, int, float, float]]:
        """``(n_index, n, delta_index, delta1, delta2)`` for every grid cell."""

        return [
            (n_index, n, delta_index, delta1, delta2)
            for n_index, n in enumerate(self.n_grid)
            for delta_index, (delta1, delta2) in enumerate(self.delta_pairs)
        ]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _coerce(value, annotation, key_path: str):
    origin = get_origin(annotation)
    if origin is Union:
        options = [arg for arg in get_args(annotation) if arg is not type(None)]
        if value is None:
            return None
        return _coerce(value, options[0], key_path)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError("expected a list", key_path)
        item_type = get_args(annotation)[0]
        return tuple(_coerce(item, item_type, f"{key_path}[{i}]") for i, item in enumerate(value))
    if dataclasses.is_dataclass(annotation):
        return _build(annotation, value, key_path)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", key_path)
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key_path)
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key_path)
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key_path)
        return value
    raise ConfigError(f"unsupported field type {annotation!r}", key_path)


def _build(cls, raw, prefix: str = ""):
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", prefix or None)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        key = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ConfigError("unknown key", key)
    kwargs = {}
    for name, value in raw.items():
        key = f"{prefix}.{name}" if prefix else name
        kwargs[name] = _coerce(value, known[name].type, key)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        # missing required keys
        raise ConfigError(str(exc), prefix or None) from exc


def parse_experiment_config(raw: Dict[str, Any]) -> ExperimentConfig:
    return _build(ExperimentConfig, raw)


def parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply ``dotted.key=value`` overrides to a copy of ``raw``; values are JSON when they parse."""

    result = json.loads(json.dumps(raw))
    for override in overrides:
        key, sep, text = override.partition("=")
        parts = key.strip().split(".")
        if not sep or not all(parts):
            raise ConfigError(f"malformed override {override!r}, expected key=value")
        target = result
        for depth, part in enumerate(parts[:-1]):
            node = target.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError("cannot set a key below a non-object value", ".".join(parts[: depth + 1]))
            target = node
        target[parts[-1]] = parse_override_value(text)
    return result


def load_experiment_config(path, overrides: Iterable[str] = ()) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    cfg = parse_experiment_config(apply_overrides(raw, overrides))
    logger.debug("Loaded experiment config %s from %s", cfg.name, path)
    return cfg
