"""Run configuration: JSON file with strict keys, overridable per flag."""
from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .catalog import DEFAULT_SMOOTHING_EPSILON
from .detection import DEFAULT_ALPHA, DEFAULT_M_MAX, DEFAULT_N_SAMPLES, DEFAULT_SIGNIFICANCE, MIN_SAMPLES, AlphaSpec
from .errors import ConfigError
from .sessions import DEFAULT_MAX_GAP


@dataclass(frozen=True)
class Config:
    alpha: AlphaSpec = DEFAULT_ALPHA
    significance: float = DEFAULT_SIGNIFICANCE
    n_samples: int = DEFAULT_N_SAMPLES
    M_max: int = DEFAULT_M_MAX
    max_gap_seconds: int = DEFAULT_MAX_GAP
    N: int = 10
    smoothing_epsilon: float = DEFAULT_SMOOTHING_EPSILON
    seed: int = 0

    def __post_init__(self) -> None:
        alpha = self.alpha
        if isinstance(alpha, Mapping):
            values = list(alpha.values())
            object.__setattr__(self, "alpha", {str(k): float(v) for k, v in alpha.items()})
        elif isinstance(alpha, (int, float)) and not isinstance(alpha, bool):
            values = [alpha]
            object.__setattr__(self, "alpha", float(alpha))
        else:
            raise ConfigError("alpha must be a number or an object of per-property numbers")
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ConfigError("alpha values must be finite and >= 0")
        _check(0 < self.significance < 1, "significance must be in (0, 1)")
        _check(_is_int(self.n_samples) and self.n_samples >= MIN_SAMPLES, f"n_samples must be an integer >= {MIN_SAMPLES}")
        _check(_is_int(self.M_max) and self.M_max >= 1, "M_max must be an integer >= 1")
        _check(_is_int(self.max_gap_seconds) and self.max_gap_seconds > 0, "max_gap_seconds must be a positive integer")
        _check(_is_int(self.N) and self.N >= 1, "N must be an integer >= 1")
        _check(0 <= self.smoothing_epsilon < 1, "smoothing_epsilon must be in [0, 1)")
        _check(_is_int(self.seed) and self.seed >= 0, "seed must be a non-negative integer")

    def override(self, **values: object) -> Config:
        """Copy with the given fields replaced; ``None`` values are ignored."""
        return replace(self, **{k: v for k, v in values.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)


def _is_int(value: object) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check(ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(message)


def config_from_dict(data: object) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(Config)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    try:
        return Config(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)
