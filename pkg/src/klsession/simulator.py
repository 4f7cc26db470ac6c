"""Synthetic catalogs and sessions drawn i.i.d. from a tilted item distribution.

A planted interest replaces the marginal of property ``k`` by a target
distribution through the multiplicative tilt

    Psi(i) ∝ G(i) * prod_k target_k(f(i, k)) / G_k(f(i, k))

which with no targets is exactly ``G``.
"""
from __future__ import annotations

import itertools
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .catalog import DEFAULT_SMOOTHING_EPSILON, Catalog, GlobalModel, Item, PropertySchema
from .distributions import Categorical
from .errors import DataError
from .sessions import Event, Session

DEFAULT_LENGTHS = (5, 10)
SESSION_START = 1_700_000_000
EVENT_SPACING = 10
SESSION_SPACING = 86_400

SchemaSpec = Mapping[str, int | Sequence[str]]


def build_schema(spec: SchemaSpec) -> PropertySchema:
    """Schema from ``{key: n_values}`` or ``{key: [labels]}``; counts get labels ``key-0``, ``key-1``, ..."""
    properties = {}
    for key, values in spec.items():
        labels = [f"{key}-{j}" for j in range(values)] if isinstance(values, int) else list(values)
        if len(labels) < 2:
            raise DataError(f"property {key!r} needs at least 2 values")
        properties[key] = labels
    return PropertySchema.from_mapping(properties)


def _item_ids(n: int) -> list[str]:
    width = max(5, len(str(n - 1)))
    return [f"item{i:0{width}d}" for i in range(n)]


def synth_catalog(
    n_items: int,
    schema: SchemaSpec,
    seed: int,
    value_weights: Mapping[str, Sequence[float]] | None = None,
    popularity_skew: float = 0.0,
    smoothing_epsilon: float = DEFAULT_SMOOTHING_EPSILON,
) -> tuple[Catalog, GlobalModel]:
    """Random catalog whose property values are drawn independently per property.

    ``value_weights`` sets non-uniform value probabilities.  With
    ``popularity_skew = 0`` the item prior is uniform; a positive skew gives a
    Zipf-like prior ``rank ** -skew`` over a seeded random item order.
    """
    if n_items < 2:
        raise DataError("n_items must be >= 2")
    built = build_schema(schema)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    columns = []
    for key, labels in built.properties:
        weights = None
        if value_weights and key in value_weights:
            weights = np.asarray(value_weights[key], dtype=np.float64)
            if weights.shape != (len(labels),) or np.any(weights < 0) or weights.sum() <= 0:
                raise DataError(f"value weights for {key!r} must be {len(labels)} non-negative numbers")
            weights = weights / weights.sum()
        columns.append(rng.choice(len(labels), size=n_items, p=weights))
    values = np.column_stack(columns)
    items = tuple(Item(item_id, tuple(int(v) for v in row)) for item_id, row in zip(_item_ids(n_items), values))
    catalog = Catalog(built, items)
    return catalog, GlobalModel.from_item_probs(catalog, popularity_prior(n_items, popularity_skew, rng), smoothing_epsilon)


def grid_catalog(schema: SchemaSpec) -> Catalog:
    """Catalog holding exactly one item per combination of property values.

    Under any product-form item prior its properties are independent.
    """
    built = build_schema(schema)
    combos = list(itertools.product(*(range(len(values)) for _, values in built.properties)))
    return Catalog(built, tuple(Item(i, combo) for i, combo in zip(_item_ids(len(combos)), combos)))


def popularity_prior(n_items: int, skew: float, rng: np.random.Generator) -> np.ndarray:
    if skew == 0:
        return np.full(n_items, 1.0 / n_items)
    weights = np.arange(1, n_items + 1, dtype=np.float64) ** -skew
    weights = weights[rng.permutation(n_items)]
    return weights / weights.sum()


@dataclass(frozen=True, eq=False)
class PlantedInterest:
    """Target value distributions for the planted properties (empty means null session)."""

    targets: Mapping[str, Categorical] = field(default_factory=dict)
    session_length: int = 7

    def __post_init__(self) -> None:
        if self.session_length < 1:
            raise ValueError("session_length must be >= 1")


def tilt_target(global_model: GlobalModel, key: str, value: int, ratio: float) -> Categorical:
    """``G_k`` with the weight of ``value`` multiplied by ``ratio``, renormalized."""
    weights = np.array(global_model.value_dists[key].probs)
    weights[value] *= ratio
    return Categorical(weights / weights.sum())


def tilted_distribution(catalog: Catalog, global_model: GlobalModel, targets: Mapping[str, Categorical]) -> np.ndarray:
    """Normalized session item distribution for the given planted targets."""
    weights = np.array(global_model.item_dist.probs)
    if not targets:
        return weights
    for key, target in targets.items():
        column = catalog.schema.position(key)
        if target.support_size != catalog.schema.size(key):
            raise DataError(f"target for {key!r} has wrong support size")
        reference = global_model.value_dists[key].probs
        values = catalog.value_matrix[:, column]
        weights = weights * (target.probs[values] / reference[values])
    total = weights.sum()
    if not total > 0:
        raise DataError("planted interest leaves no item with positive probability")
    return weights / total


def synth_session(
    catalog: Catalog,
    global_model: GlobalModel,
    planted: PlantedInterest,
    seed: int | np.random.Generator,
    user_id: str = "sim",
) -> Session:
    """Draw ``planted.session_length`` i.i.d. items from the tilted distribution."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probs = tilted_distribution(catalog, global_model, planted.targets)
    picks = rng.choice(len(catalog), size=planted.session_length, p=probs)
    return Session(user_id, tuple(catalog.item_ids[p] for p in picks))


@dataclass(frozen=True, eq=False)
class SimulatedSession:
    session: Session
    planted: PlantedInterest
    planted_values: Mapping[str, int] = field(default_factory=dict)


def simulate_sessions(
    catalog: Catalog,
    global_model: GlobalModel,
    n_sessions: int,
    seed: int,
    planted_fraction: float = 1.0,
    tilt: float = 3.0,
    n_planted: int = 1,
    lengths: tuple[int, int] = DEFAULT_LENGTHS,
    workers: int = 1,
) -> list[SimulatedSession]:
    """Generate sessions with lengths uniform on ``lengths`` (inclusive).

    With probability ``planted_fraction`` a session plants ``n_planted``
    random properties, each tilting a value drawn from ``G_k`` by ``tilt``.
    Session ``i`` uses a generator seeded by ``(seed, 1, i)``.
    """
    low, high = lengths
    if not 1 <= low <= high:
        raise ValueError(f"invalid session length range {lengths!r}")
    if not 0.0 <= planted_fraction <= 1.0:
        raise ValueError("planted_fraction must be in [0, 1]")
    keys = catalog.schema.keys
    if not 0 <= n_planted <= len(keys):
        raise ValueError(f"n_planted must be between 0 and {len(keys)}")
    width = max(6, len(str(n_sessions - 1)))

    def one(index: int) -> SimulatedSession:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, index]))
        length = int(rng.integers(low, high + 1))
        targets, chosen = {}, {}
        if rng.random() < planted_fraction:
            for column in sorted(rng.choice(len(keys), size=n_planted, replace=False)):
                key = keys[column]
                value = int(rng.choice(catalog.schema.size(key), p=global_model.value_dists[key].probs))
                targets[key] = tilt_target(global_model, key, value, tilt)
                chosen[key] = value
        planted = PlantedInterest(targets, length)
        session = synth_session(catalog, global_model, planted, rng, user_id=f"u{index:0{width}d}")
        return SimulatedSession(session, planted, chosen)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(n_sessions)))
    return [one(i) for i in range(n_sessions)]


def session_events(simulated: Sequence[SimulatedSession]) -> list[Event]:
    """Events CSV rows: one user per session, days apart, views 10 s apart."""
    events = []
    for index, sim in enumerate(simulated):
        start = SESSION_START + index * SESSION_SPACING
        for offset, item_id in enumerate(sim.session.items):
            events.append(Event(sim.session.user_id, item_id, start + offset * EVENT_SPACING, "view"))
    return events
