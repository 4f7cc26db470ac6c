"""Categorical distributions, the smoothed session estimator and KL divergence.

All divergences are in nats.  The row-wise helpers ``blend_rows`` and
``kl_rows`` are shared by detection and calibration so that a session and a
Monte Carlo null draw with the same value counts produce bit-identical
divergences.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DataError

if TYPE_CHECKING:
    from .catalog import Catalog, GlobalModel
    from .sessions import Session

SUM_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class Categorical:
    """Probability vector over a dense support ``0..support_size-1``."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probabilities must be a non-empty vector")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("probabilities must be finite and non-negative")
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def support_size(self) -> int:
        return int(self.probs.size)

    def __len__(self) -> int:
        return self.support_size

    def __getitem__(self, index: int) -> float:
        return float(self.probs[index])

    @classmethod
    def uniform(cls, size: int) -> Categorical:
        if size < 1:
            raise ValueError("support size must be >= 1")
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def from_counts(cls, counts: Sequence[float] | np.ndarray) -> Categorical:
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise ValueError("counts must have positive total")
        return cls(counts / total)

    def allclose(self, other: Categorical, atol: float = 1e-12) -> bool:
        return self.support_size == other.support_size and bool(
            np.allclose(self.probs, other.probs, rtol=0.0, atol=atol)
        )

    def total_variation(self, other: Categorical) -> float:
        _check_support(self, other)
        return 0.5 * float(np.abs(self.probs - other.probs).sum())


def _check_support(p: Categorical, q: Categorical) -> None:
    if p.support_size != q.support_size:
        raise ValueError(
            f"support mismatch: {p.support_size} vs {q.support_size}"
        )


def blend_weight(alpha: float, length: int) -> float:
    """Weight kept on the global distribution for a session of ``length`` events."""
    return math.exp(-alpha * length)


def blend_rows(freqs: np.ndarray, reference: np.ndarray, alpha: float, length: int) -> np.ndarray:
    """Convex blend ``(1 - lam) * freqs + lam * reference`` with ``lam = exp(-alpha * length)``.

    ``freqs`` may be a single vector or a 2-D array of rows.
    """
    lam = blend_weight(alpha, length)
    return (1.0 - lam) * freqs + lam * reference


def kl_rows(rows: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """KL divergence of every row of ``rows`` from ``reference``.

    Terms with a zero row entry contribute exactly zero.  The caller must
    guarantee ``reference > 0`` wherever a row is positive.
    """
    rows = np.atleast_2d(rows)
    positive = rows > 0
    ratio = np.divide(rows, reference, out=np.ones_like(rows), where=positive)
    logs = np.log(ratio, out=np.zeros_like(rows), where=positive)
    terms = np.where(positive, rows * logs, 0.0)
    # Round-off can push a near-zero sum slightly negative.
    return np.maximum(terms.sum(axis=-1), 0.0)


def kl_divergence(p: Categorical, q: Categorical) -> float:
    """Return KL(p || q) in nats.

    Raises ``DataError`` when ``q`` vanishes somewhere ``p`` does not, since
    the divergence is infinite there (usually an unsmoothed reference).
    """
    _check_support(p, q)
    bad = (p.probs > 0) & (q.probs <= 0)
    if np.any(bad):
        index = int(np.flatnonzero(bad)[0])
        raise DataError(f"infinite divergence: q is zero at index {index} where p > 0")
    return float(kl_rows(p.probs, q.probs)[0])


def _value_counts(session: Session | Sequence[str], key: str, catalog: Catalog) -> tuple[np.ndarray, int]:
    from .sessions import session_items

    items = session_items(session)
    if not items:
        raise DataError("empty session")
    column = catalog.schema.position(key)
    values = catalog.value_matrix[catalog.positions(items), column]
    counts = np.bincount(values, minlength=catalog.schema.size(key))
    return counts, len(items)


def empirical_value_distribution(session: Session | Sequence[str], key: str, catalog: Catalog) -> Categorical:
    """Frequency of each value of ``key`` among the session's items."""
    counts, length = _value_counts(session, key, catalog)
    return Categorical(counts / length)


def smoothed_session_estimate(
    session: Session | Sequence[str],
    key: str,
    alpha: float,
    global_model: GlobalModel,
    catalog: Catalog,
) -> Categorical:
    """Blend the session's value frequencies with the global value distribution.

    The weight on the global distribution decays as ``exp(-alpha * m)`` with
    session length ``m``: ``alpha = 0`` returns the global distribution and a
    large ``alpha`` returns the raw frequencies.
    """
    if alpha < 0 or not math.isfinite(alpha):
        raise ValueError(f"alpha must be a finite non-negative number, got {alpha!r}")
    counts, length = _value_counts(session, key, catalog)
    reference = global_model.value_dists[key].probs
    return Categorical(blend_rows(counts / length, reference, alpha, length))
