import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Tuple, Union

from pytorch_dyadic_czo.grid import exact_gamma
from pytorch_dyadic_czo.utils import ConfigInvalid

from pytorch_dyadic_czo.utils import DEFAULT_GAMMA
from pytorch_dyadic_czo.utils import DEFAULT_K_MAX
from pytorch_dyadic_czo.utils import DEFAULT_R

logger = logging.getLogger(__name__)

EXPERIMENTS = ("verify", "pi-good", "decay", "shift-avg", "growth", "norms")

# keys that change where or how fast a run executes, never what it computes
EXECUTION_KEYS = ("out", "jobs")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated parameters of one run.

    Precedence is defaults < config file < command-line flags.
    """
    experiment: str = "verify"
    n: int = 1
    L: int = 6
    d: int = 4
    r: int = DEFAULT_R
    gamma: float = DEFAULT_GAMMA
    k_max: int = DEFAULT_K_MAX
    seed: int = 1
    samples: int = 100000
    trials: int = 100
    tolerance: float = 1e-10
    band: int = 2
    out: str = "results"
    jobs: int = 1
    deterministic: bool = False
    d_list: Tuple[int, ...] = (1, 2, 4, 8, 16)
    search_budget: int = 8
    growth_level: int = 3
    m_min: int = 2
    m_max: int = 64
    quadrature_level: int = 2
    points: int = 512
    grids: int = 2000
    exponents: Tuple[float, ...] = (2.0, 4.0)
    power_tol: float = 1e-8
    max_iter: int = 2000

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigInvalid("unknown experiment {!r}".format(self.experiment))
        for name in ("n", "L", "d", "r", "k_max", "samples", "trials", "jobs", "search_budget",
                     "growth_level", "points", "grids", "max_iter"):
            if getattr(self, name) < 1:
                raise ConfigInvalid("{} must be positive, got {}".format(name, getattr(self, name)))
        if not 0.0 < self.gamma < 1.0:
            raise ConfigInvalid("gamma must lie in (0, 1), got {}".format(self.gamma))
        exact_gamma(self.gamma)
        if not self.r <= self.k_max <= 62:
            raise ConfigInvalid("need r <= k_max <= 62")
        if self.tolerance < 0 or self.power_tol < 0 or self.band < 0:
            raise ConfigInvalid("tolerances and band must be nonnegative")
        if self.seed < 0 or self.seed >= 1 << 64:
            raise ConfigInvalid("seed must be an unsigned 64-bit integer")
        if not self.d_list or list(self.d_list) != sorted(self.d_list) or self.d_list[0] < 1:
            raise ConfigInvalid("d_list must be ascending positive sizes")
        if not 1 <= self.m_min <= self.m_max:
            raise ConfigInvalid("need 1 <= m_min <= m_max")
        if self.points & (self.points - 1):
            raise ConfigInvalid("points must be a power of two")
        if any(p < 1 for p in self.exponents):
            raise ConfigInvalid("exponents must be at least 1")


FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value: Any) -> Any:
    expected = FIELD_TYPES[name]
    try:
        if expected is bool:
            if not isinstance(value, bool):
                raise TypeError(value)
            return value
        if expected is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError(value)
            return int(value)
        if expected is float:
            return float(value)
        if expected is str:
            return str(value)
        if expected == Tuple[int, ...]:
            return tuple(_coerce_item(int, v) for v in value)
        if expected == Tuple[float, ...]:
            return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigInvalid("key {!r} cannot take the value {!r}".format(name, value))
    return value


def _coerce_item(kind, value):
    if isinstance(value, bool) or kind(value) != value:
        raise TypeError(value)
    return kind(value)


def merge(config: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    unknown = sorted(set(overrides) - set(FIELD_TYPES))
    if unknown:
        raise ConfigInvalid("unknown keys: {}".format(", ".join(unknown)))
    values = {name: _coerce(name, value) for name, value in overrides.items() if value is not None}
    return dataclasses.replace(config, **values)


def load_config(path: Union[str, os.PathLike], base: ExperimentConfig = ExperimentConfig()) -> ExperimentConfig:
    with open(path, encoding="utf-8") as handle:
        try:
            record = json.load(handle)
        except json.JSONDecodeError as error:
            raise ConfigInvalid("{}: {}".format(path, error))
    if not isinstance(record, dict):
        raise ConfigInvalid("{}: the top level must be an object".format(path))
    return merge(base, record)


def canonical_json(config: ExperimentConfig) -> str:
    record = {k: v for k, v in dataclasses.asdict(config).items() if k not in EXECUTION_KEYS}
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    """sha256 of the canonical JSON of everything that affects results."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def as_record(config: ExperimentConfig) -> Dict[str, Any]:
    return dataclasses.asdict(config)
