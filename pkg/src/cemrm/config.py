"""Versioned JSON campaign configuration.

Every section rejects unknown keys, and errors name the offending field by
its dotted path so a typo in a config file is reported precisely.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .design_space import DesignVector
from .objective import RewardWeights
from .reward_model import RewardModelConfig
from .scheduler import RateSchedule
from .surrogate.sim import PhaseConfig

SCHEMA_VERSION = 1
MODES = ("hybrid", "pure-cem", "rho1", "random")
ELITE_SOURCES = ("pooled", "ground-truth")
TELEOP_MODES = ("multi", "single")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the culprit."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


def _check_keys(data: Any, allowed: set[str], where: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(where or "<root>", "expected a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        path = f"{where}.{unknown[0]}" if where else unknown[0]
        raise ConfigError(path, "unknown key")
    return data


def _number(data: dict, key: str, where: str, kind=float):
    value = data[key]
    path = f"{where}.{key}" if where else key
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    return float(value)


def _section(cls, data: dict | None, where: str, ints=(), tuples=()):
    """Build a flat dataclass from a dict, naming bad fields on error."""
    if data is None:
        return cls()
    names = {f.name for f in fields(cls)}
    _check_keys(data, names, where)
    kw = {}
    for key, value in data.items():
        path = f"{where}.{key}"
        if key in tuples:
            if not isinstance(value, list):
                raise ConfigError(path, "expected a list")
            kw[key] = tuple(value)
        elif key in ints:
            kw[key] = _number(data, key, where, int)
        elif isinstance(getattr(cls(), key), bool):
            if not isinstance(value, bool):
                raise ConfigError(path, f"expected true/false, got {value!r}")
            kw[key] = value
        elif isinstance(getattr(cls(), key), (int, float)):
            kw[key] = _number(data, key, where)
        else:
            kw[key] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from None


@dataclass(frozen=True)
class ScheduleConfig:
    rho_min: float = 0.1
    rho_max: float = 0.7
    eta: float = 0.9
    N: int = 100

    def __post_init__(self):
        RateSchedule(self.rho_min, self.rho_max, self.N, self.eta)

    def schedule(self) -> RateSchedule:
        return RateSchedule(self.rho_min, self.rho_max, self.N, self.eta)


@dataclass(frozen=True)
class EvaluatorConfig:
    """``kind`` is ``"benchmark"`` (uses ``name`` and ``dim``) or ``"surrogate"``.

    For the surrogate, ``bundle`` is a bundle directory (null selects the
    shipped one), ``teleop`` picks a random record per object (``multi``)
    or always the first (``single``), and ``phase`` overrides simulator
    constants.
    """

    kind: str = "benchmark"
    name: str = "sphere"
    dim: int = 36
    bundle: str | None = None
    teleop: str = "multi"
    phase: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("benchmark", "surrogate"):
            raise ConfigError("evaluator.kind", f"must be 'benchmark' or 'surrogate', got {self.kind!r}")
        if self.teleop not in TELEOP_MODES:
            raise ConfigError("evaluator.teleop", f"must be one of {TELEOP_MODES}")
        if self.dim < 1:
            raise ConfigError("evaluator.dim", "must be positive")

    def phase_config(self) -> PhaseConfig:
        try:
            return PhaseConfig.from_dict(self.phase)
        except (TypeError, ValueError) as exc:
            raise ConfigError("evaluator.phase", str(exc)) from None


@dataclass(frozen=True)
class CampaignConfig:
    K: int = 45
    N_e: int = 7
    J: int = 100
    seed: int = 0
    mode: str = "hybrid"
    init_std: float = 0.5  # per-coordinate std of the first population, normalized units
    per_dimension_sigma: bool = False
    sigma_floor: float = 1e-6
    elites: str = "pooled"
    screen_invalid: bool = False
    train_feasible_only: bool = False
    checkpoint_every: int = 0
    record_wall_time: bool = False
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    reward_model: RewardModelConfig = field(default_factory=RewardModelConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    base_design: dict | None = None

    def __post_init__(self):
        if self.N_e < 2:
            raise ConfigError("N_e", "must be at least 2")
        if self.K < self.N_e:
            raise ConfigError("K", f"population {self.K} is smaller than N_e={self.N_e}")
        if self.J < 1:
            raise ConfigError("J", "must be at least 1")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.elites not in ELITE_SOURCES:
            raise ConfigError("elites", f"must be one of {ELITE_SOURCES}")
        if self.init_std < 0:
            raise ConfigError("init_std", "must be non-negative")
        if self.sigma_floor < 0:
            raise ConfigError("sigma_floor", "must be non-negative")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every", "must be non-negative")
        rm = self.reward_model
        if rm.optimizer not in ("sgd", "adam"):
            raise ConfigError("reward_model.optimizer", f"must be 'sgd' or 'adam', got {rm.optimizer!r}")
        if rm.activation not in ("tanh", "relu"):
            raise ConfigError("reward_model.activation", f"must be 'tanh' or 'relu', got {rm.activation!r}")
        if rm.input_features not in ("raw", "quadratic"):
            raise ConfigError("reward_model.input_features", "must be 'raw' or 'quadratic'")
        if not rm.hidden or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in rm.hidden):
            raise ConfigError("reward_model.hidden", "must be a non-empty list of positive integers")
        if rm.batch_size < 1:
            raise ConfigError("reward_model.batch_size", "must be at least 1")
        if rm.train_steps < 0:
            raise ConfigError("reward_model.train_steps", "must be non-negative")
        if rm.capacity < 1:
            raise ConfigError("reward_model.capacity", "must be at least 1")
        if not rm.learning_rate > 0:
            raise ConfigError("reward_model.learning_rate", "must be positive")
        if self.evaluator.kind == "benchmark":
            from .benchmarks import REGISTRY
            if self.evaluator.name not in REGISTRY:
                raise ConfigError("evaluator.name", f"unknown benchmark {self.evaluator.name!r}")
        else:
            self.evaluator.phase_config()
        if self.base_design is not None:
            if self.evaluator.kind != "surrogate":
                raise ConfigError("base_design", "only the surrogate evaluator takes a base design")
            try:
                DesignVector.from_dict(self.base_design)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError("base_design", f"not a design: {exc}") from None

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("schedule", "weights", "evaluator"):
                value = asdict(value)
            elif f.name == "reward_model":
                value = asdict(value)
                value["hidden"] = list(value["hidden"])
            out[f.name] = value
        out["evaluator"]["phase"] = dict(self.evaluator.phase)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        names = {f.name for f in fields(cls)} | {"schema_version"}
        _check_keys(data, names, "")
        if "schema_version" not in data:
            raise ConfigError("schema_version", "missing")
        if data["schema_version"] != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {data['schema_version']!r}")
        kw: dict[str, Any] = {}
        for key, value in data.items():
            if key == "schema_version":
                continue
            if key == "schedule":
                kw[key] = _section(ScheduleConfig, value, "schedule", ints=("N",))
            elif key == "reward_model":
                kw[key] = _section(RewardModelConfig, value, "reward_model",
                                   ints=("batch_size", "train_steps", "capacity"), tuples=("hidden",))
            elif key == "weights":
                kw[key] = _section(RewardWeights, value, "weights")
            elif key == "evaluator":
                kw[key] = _section(EvaluatorConfig, value, "evaluator", ints=("dim",))
            elif key in ("K", "N_e", "J", "seed", "checkpoint_every"):
                kw[key] = _number(data, key, "", int)
            elif key in ("init_std", "sigma_floor"):
                kw[key] = _number(data, key, "")
            elif key in ("per_dimension_sigma", "screen_invalid", "train_feasible_only", "record_wall_time"):
                if not isinstance(value, bool):
                    raise ConfigError(key, f"expected true/false, got {value!r}")
                kw[key] = value
            else:
                kw[key] = value
        return cls(**kw)

    def with_overrides(self, **changes) -> "CampaignConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)


def load_config(path: str | Path) -> CampaignConfig:
    """Read and validate a config file, checking referenced files exist."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    cfg = CampaignConfig.from_dict(data)
    bundle = cfg.evaluator.bundle
    if cfg.evaluator.kind == "surrogate" and bundle is not None and not Path(bundle).exists():
        raise ConfigError("evaluator.bundle", f"bundle not found: {bundle}")
    return cfg


def dump_config(cfg: CampaignConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def save_config(cfg: CampaignConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg))
