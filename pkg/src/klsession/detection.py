"""Null-quantile threshold calibration and per-session interest detection.

For every property ``k`` and session length ``m`` the threshold is the
``(1 - significance)`` quantile of the divergence between a smoothed estimate
built from ``m`` i.i.d. draws of ``G_k`` and ``G_k`` itself.  A property is
flagged as an interest when the session's divergence exceeds its threshold.
"""
from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import Catalog, GlobalModel
from .distributions import blend_rows, kl_rows
from .errors import ConfigError, DataError
from .sessions import Session, session_items

DEFAULT_ALPHA = 0.5
DEFAULT_SIGNIFICANCE = 0.05
DEFAULT_N_SAMPLES = 20_000
DEFAULT_M_MAX = 50
MIN_SAMPLES = 1000

AlphaSpec = float | Mapping[str, float]


def resolve_alpha(alpha: AlphaSpec, keys: Sequence[str]) -> dict[str, float]:
    """Expand a scalar or per-property alpha into a value for every key.

    A mapping may carry a ``"default"`` entry used for keys it does not name.
    """
    if isinstance(alpha, Mapping):
        unknown = [k for k in alpha if k != "default" and k not in keys]
        if unknown:
            raise ConfigError(f"alpha given for unknown properties: {unknown}")
        default = alpha.get("default", DEFAULT_ALPHA)
        resolved = {k: float(alpha.get(k, default)) for k in keys}
    else:
        resolved = {k: float(alpha) for k in keys}
    for key, value in resolved.items():
        if not math.isfinite(value) or value < 0:
            raise ConfigError(f"alpha for {key!r} must be finite and >= 0, got {value!r}")
    return resolved


def quantile_rank(significance: float, n_samples: int) -> int:
    """1-based order statistic used as the ``(1 - significance)`` quantile."""
    # Rounding guards against 0.95 * 20000 landing a hair above an integer.
    return max(1, min(n_samples, math.ceil(round((1.0 - significance) * n_samples, 9))))


@dataclass(frozen=True, eq=False)
class ThresholdTable:
    """Calibrated thresholds per property; ``thresholds[k][m - 1]`` is the threshold at length ``m``."""

    thresholds: Mapping[str, tuple[float, ...]]
    significance: float
    n_samples: int
    alpha: Mapping[str, float]
    seed: int
    M_max: int
    config: Mapping[str, object] | None = field(default=None)
    reference: Mapping[str, tuple[float, ...]] | None = field(default=None)

    def __post_init__(self) -> None:
        for key, row in self.thresholds.items():
            if len(row) != self.M_max:
                raise DataError(f"thresholds for {key!r} have {len(row)} entries, expected M_max={self.M_max}")
            if any(not (eps >= 0) for eps in row):
                raise DataError(f"thresholds for {key!r} must be non-negative")

    def threshold(self, key: str, length: int) -> float:
        """Threshold for a session of ``length`` events; lengths past ``M_max`` reuse the last entry."""
        if length < 1:
            raise DataError("session length must be >= 1")
        try:
            row = self.thresholds[key]
        except KeyError:
            raise DataError(f"no thresholds calibrated for property {key!r}") from None
        return row[min(length, self.M_max) - 1]

    def with_overrides(self, overrides: Mapping[str, float]) -> ThresholdTable:
        """Replace the thresholds of the named properties by a fixed value at every length."""
        rows = dict(self.thresholds)
        for key, eps in overrides.items():
            if key not in rows:
                raise DataError(f"no thresholds calibrated for property {key!r}")
            if not eps >= 0:
                raise ConfigError(f"threshold override for {key!r} must be >= 0")
            rows[key] = (float(eps),) * self.M_max
        return ThresholdTable(rows, self.significance, self.n_samples, self.alpha, self.seed, self.M_max, self.config, self.reference)

    def check_reference(self, global_model: GlobalModel, tolerance: float = 1e-12) -> None:
        """Fail if ``global_model`` is not the model the table was calibrated against."""
        if self.reference is None:
            return
        for key, probs in self.reference.items():
            current = global_model.value_dists.get(key)
            if current is None or current.support_size != len(probs) or np.max(np.abs(current.probs - np.asarray(probs))) > tolerance:
                raise DataError(f"thresholds were calibrated against a different global distribution for {key!r}")

    def to_dict(self) -> dict:
        data = {
            "significance": self.significance,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "M_max": self.M_max,
            "alpha": dict(self.alpha),
            "thresholds": {key: list(row) for key, row in self.thresholds.items()},
        }
        if self.config is not None:
            data["config"] = dict(self.config)
        if self.reference is not None:
            data["reference"] = {key: list(row) for key, row in self.reference.items()}
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> ThresholdTable:
        try:
            return cls(
                thresholds={str(k): tuple(float(x) for x in row) for k, row in data["thresholds"].items()},
                significance=float(data["significance"]),
                n_samples=int(data["n_samples"]),
                alpha={str(k): float(v) for k, v in data["alpha"].items()},
                seed=int(data["seed"]),
                M_max=int(data["M_max"]),
                config=data.get("config"),
                reference={str(k): tuple(float(x) for x in row) for k, row in data["reference"].items()} if "reference" in data else None,
            )
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"malformed threshold table: {exc!r}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> ThresholdTable:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read thresholds {str(path)!r}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data)


def null_divergences(reference: np.ndarray, alpha: float, length: int, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Divergences of ``n_samples`` null sessions of ``length`` value draws from ``reference``."""
    counts = rng.multinomial(length, reference, size=n_samples)
    estimates = blend_rows(counts / length, reference, alpha, length)
    return kl_rows(estimates, reference)


def cell_rng(seed: int, property_index: int, length: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, property_index, length]))


def calibrate_thresholds(
    global_model: GlobalModel,
    alpha: AlphaSpec = DEFAULT_ALPHA,
    significance: float = DEFAULT_SIGNIFICANCE,
    n_samples: int = DEFAULT_N_SAMPLES,
    M_max: int = DEFAULT_M_MAX,
    seed: int = 0,
    workers: int = 1,
    config: Mapping[str, object] | None = None,
) -> ThresholdTable:
    """Monte Carlo calibration of thresholds for lengths ``1..M_max``.

    Each (property, length) cell draws from its own generator seeded by
    ``(seed, property index, length)``, so the table does not depend on
    ``workers`` or on scheduling.
    """
    if not 0.0 < significance < 1.0:
        raise ConfigError(f"significance must be in (0, 1), got {significance!r}")
    if n_samples < MIN_SAMPLES:
        raise ConfigError(f"n_samples must be >= {MIN_SAMPLES}, got {n_samples!r}")
    if M_max < 1:
        raise ConfigError(f"M_max must be >= 1, got {M_max!r}")
    keys = list(global_model.value_dists)
    rates = resolve_alpha(alpha, keys)
    rank = quantile_rank(significance, n_samples)

    def run_cell(cell: tuple[int, int]) -> float:
        index, length = cell
        key = keys[index]
        deltas = null_divergences(global_model.value_dists[key].probs, rates[key], length, n_samples, cell_rng(seed, index, length))
        return float(np.partition(deltas, rank - 1)[rank - 1])

    cells = [(index, length) for index in range(len(keys)) for length in range(1, M_max + 1)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(run_cell, cells))
    else:
        values = [run_cell(cell) for cell in cells]
    thresholds = {key: tuple(values[i * M_max:(i + 1) * M_max]) for i, key in enumerate(keys)}
    reference = {key: tuple(float(x) for x in global_model.value_dists[key].probs) for key in keys}
    return ThresholdTable(thresholds, significance, n_samples, rates, seed, M_max, config, reference)


def _divergence(items: Sequence[str], column: int, key: str, alpha: float, global_model: GlobalModel, catalog: Catalog) -> float:
    values = catalog.value_matrix[catalog.positions(items), column]
    counts = np.bincount(values, minlength=catalog.schema.size(key))
    reference = global_model.value_dists[key].probs
    return float(kl_rows(blend_rows(counts / len(items), reference, alpha, len(items)), reference)[0])


def session_divergence(
    session: Session | Sequence[str],
    key: str,
    alpha: float,
    global_model: GlobalModel,
    catalog: Catalog,
) -> float:
    """Divergence of the smoothed session estimate for ``key`` from ``G_k``, in nats."""
    items = session_items(session)
    if not items:
        raise DataError("empty session")
    if alpha < 0 or not math.isfinite(alpha):
        raise ValueError(f"alpha must be a finite non-negative number, got {alpha!r}")
    return _divergence(items, catalog.schema.position(key), key, alpha, global_model, catalog)


@dataclass(frozen=True)
class InterestReport:
    """Detected interest set with the evidence behind each decision."""

    interests: tuple[str, ...]
    divergences: Mapping[str, float]
    thresholds_applied: Mapping[str, float]
    session_length: int
    alpha: Mapping[str, float]

    def to_dict(self) -> dict:
        return {
            "session_length": self.session_length,
            "interests": list(self.interests),
            "divergences": dict(self.divergences),
            "thresholds_applied": dict(self.thresholds_applied),
        }


def detect_interest(
    session: Session | Sequence[str],
    table: ThresholdTable,
    global_model: GlobalModel,
    catalog: Catalog,
    alpha: AlphaSpec | None = None,
) -> InterestReport:
    """Flag every property whose session divergence exceeds its calibrated threshold.

    ``alpha`` defaults to the table's calibration rates; passing different
    rates is an error because the thresholds would no longer be valid.
    """
    items = session_items(session)
    if not items:
        raise DataError("empty session")
    keys = catalog.schema.keys
    table.check_reference(global_model)
    if alpha is None:
        rates = dict(table.alpha)
    else:
        rates = resolve_alpha(alpha, keys)
        if rates != dict(table.alpha):
            raise ConfigError(f"alpha {rates} does not match the table's calibration alpha {dict(table.alpha)}")
    divergences, applied, interests = {}, {}, []
    for column, key in enumerate(keys):
        delta = _divergence(items, column, key, rates[key], global_model, catalog)
        eps = table.threshold(key, len(items))
        divergences[key] = delta
        applied[key] = eps
        if delta > eps:
            interests.append(key)
    return InterestReport(tuple(interests), divergences, applied, len(items), rates)
