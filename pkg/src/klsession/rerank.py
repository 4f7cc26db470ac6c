"""Base scorers, the interest coefficient and the re-ranked top-N recommender."""
from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, GlobalModel
from .detection import InterestReport, resolve_alpha
from .distributions import Categorical, smoothed_session_estimate
from .errors import DataError
from .sessions import Session, session_items

SCORER_KINDS = ("static-cosine", "uniform", "popularity")
SCORER_ALIASES = {"static": "static-cosine", "cosine": "static-cosine"}


@dataclass(frozen=True)
class Scorer:
    """Base weight function; ``static-cosine`` scores similarity to ``anchor``."""

    kind: str
    anchor: str | None = None

    def __post_init__(self) -> None:
        kind = SCORER_ALIASES.get(self.kind, self.kind)
        if kind not in SCORER_KINDS:
            raise ValueError(f"unknown scorer {self.kind!r}; expected one of {SCORER_KINDS}")
        object.__setattr__(self, "kind", kind)


@dataclass(frozen=True)
class RankedList:
    entries: tuple[tuple[str, float], ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def item_ids(self) -> list[str]:
        return [item_id for item_id, _ in self.entries]

    def to_json(self) -> str:
        return json.dumps([{"item_id": i, "score": s} for i, s in self.entries])


def base_weights(scorer: Scorer, catalog: Catalog, global_model: GlobalModel) -> np.ndarray:
    """Weight of every catalog item (load order) under ``scorer``."""
    if scorer.kind == "uniform":
        return np.ones(len(catalog))
    if scorer.kind == "popularity":
        return np.array(global_model.item_dist.probs, dtype=np.float64)
    if scorer.anchor is None:
        raise ValueError("static-cosine scorer needs an anchor item")
    features = catalog.features
    anchor = features[catalog.position(scorer.anchor)]
    norms = np.linalg.norm(features, axis=1)
    anchor_norm = float(np.linalg.norm(anchor))
    if anchor_norm == 0.0:
        return np.zeros(len(catalog))
    dots = features @ anchor
    return np.divide(dots, norms * anchor_norm, out=np.zeros(len(catalog)), where=norms > 0)


def session_estimates(
    session: Session | Sequence[str],
    keys: Sequence[str],
    alpha: Mapping[str, float],
    global_model: GlobalModel,
    catalog: Catalog,
) -> dict[str, Categorical]:
    return {key: smoothed_session_estimate(session, key, alpha[key], global_model, catalog) for key in keys}


def coefficient_vector(
    interests: Sequence[str],
    estimates: Mapping[str, Categorical],
    global_model: GlobalModel,
    catalog: Catalog,
) -> np.ndarray:
    """Interest coefficient of every catalog item: product of estimate/global ratios over ``interests``."""
    coefficients = np.ones(len(catalog))
    for key in interests:
        column = catalog.schema.position(key)
        reference = global_model.value_dists[key].probs
        values = catalog.value_matrix[:, column]
        if np.any(reference[values] <= 0):
            raise DataError(f"global distribution of {key!r} is zero at an item's value; fit it with smoothing")
        ratio = estimates[key].probs / np.where(reference > 0, reference, 1.0)
        coefficients *= ratio[values]
    return coefficients


def interest_coefficient(
    session: Session | Sequence[str],
    report: InterestReport,
    item_id: str,
    global_model: GlobalModel,
    catalog: Catalog,
    alpha: float | Mapping[str, float] | None = None,
) -> float:
    """Coefficient for one item; 1.0 when no interest was detected."""
    position = catalog.position(item_id)
    rates = report.alpha if alpha is None else resolve_alpha(alpha, catalog.schema.keys)
    coefficient = 1.0
    for key in report.interests:
        column = catalog.schema.position(key)
        value = catalog.value_matrix[position, column]
        reference = global_model.value_dists[key][value]
        if reference <= 0:
            raise DataError(f"global distribution of {key!r} is zero at {item_id!r}'s value; fit it with smoothing")
        estimate = smoothed_session_estimate(session, key, rates[key], global_model, catalog)
        coefficient *= estimate[value] / reference
    return coefficient


def top_n(scores: np.ndarray, n: int, catalog: Catalog, exclude: int | None = None, pool: np.ndarray | None = None) -> RankedList:
    """Arg-top-``n`` of per-item ``scores``: descending score, ties by ascending item id.

    ``exclude`` is a catalog position to leave out; ``pool`` restricts the
    ranking to the given positions.
    """
    order = np.lexsort((catalog.id_order, -scores))
    if pool is not None:
        order = order[np.isin(order, pool)]
    entries = []
    for position in order:
        if position == exclude:
            continue
        entries.append((catalog.item_ids[position], float(scores[position])))
        if len(entries) == n:
            break
    return RankedList(tuple(entries))


def _anchor_and_weights(
    session: Session | Sequence[str], scorer: Scorer, n: int, catalog: Catalog, global_model: GlobalModel
) -> tuple[int, np.ndarray]:
    items = session_items(session)
    if not items:
        raise DataError("empty session")
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n!r}")
    anchor = items[-1]
    if scorer.kind == "static-cosine" and scorer.anchor is None:
        scorer = Scorer(scorer.kind, anchor)
    return catalog.position(anchor), base_weights(scorer, catalog, global_model)


def base_recommend(
    session: Session | Sequence[str],
    scorer: Scorer,
    n: int,
    global_model: GlobalModel,
    catalog: Catalog,
) -> RankedList:
    """Top-``n`` items by base weight alone, excluding the session's last item."""
    anchor, weights = _anchor_and_weights(session, scorer, n, catalog, global_model)
    return top_n(weights, n, catalog, anchor)


def recommend(
    session: Session | Sequence[str],
    scorer: Scorer,
    report: InterestReport,
    n: int,
    global_model: GlobalModel,
    catalog: Catalog,
    alpha: float | Mapping[str, float] | None = None,
    estimates: Mapping[str, Categorical] | None = None,
    candidates: int | None = None,
) -> RankedList:
    """Top-``n`` items by ``coefficient * base weight``, excluding the session's last item.

    Every catalog item is re-scored unless ``candidates`` is given, in which
    case only the base top-``candidates`` list is re-ordered.  ``estimates``
    replaces the smoothed session estimates (one per detected property).
    """
    anchor, weights = _anchor_and_weights(session, scorer, n, catalog, global_model)
    if report.interests:
        if estimates is None:
            rates = report.alpha if alpha is None else resolve_alpha(alpha, catalog.schema.keys)
            estimates = session_estimates(session, report.interests, rates, global_model, catalog)
        scores = coefficient_vector(report.interests, estimates, global_model, catalog) * weights
    else:
        scores = weights
    pool = None
    if candidates is not None:
        if candidates < 1:
            raise ValueError(f"candidates must be >= 1, got {candidates!r}")
        base = top_n(weights, candidates, catalog, anchor)
        pool = catalog.positions(base.item_ids)
    return top_n(scores, n, catalog, anchor, pool)
