"""Item catalog, property schema and the global item/value distributions."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .distributions import Categorical
from .errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_SMOOTHING_EPSILON = 1e-6


@dataclass(frozen=True)
class PropertySchema:
    """Ordered properties, each with an ordered tuple of value labels.

    Value labels map to dense indices by position.
    """

    properties: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self) -> None:
        keys = [key for key, _ in self.properties]
        if not keys:
            raise DataError("schema has no properties")
        duplicates = sorted(k for k, n in Counter(keys).items() if n > 1)
        if duplicates:
            raise DataError(f"duplicate property keys: {duplicates}")
        for key, values in self.properties:
            if not values:
                raise DataError(f"property {key!r} has no values")
            dup = sorted(v for v, n in Counter(values).items() if n > 1)
            if dup:
                raise DataError(f"property {key!r} has duplicate values: {dup}")

    @classmethod
    def from_mapping(cls, properties: Mapping[str, Sequence[str]]) -> PropertySchema:
        return cls(tuple((str(k), tuple(str(v) for v in vs)) for k, vs in properties.items()))

    @cached_property
    def keys(self) -> tuple[str, ...]:
        return tuple(key for key, _ in self.properties)

    @cached_property
    def _positions(self) -> dict[str, int]:
        return {key: i for i, key in enumerate(self.keys)}

    @cached_property
    def _value_index(self) -> dict[str, dict[str, int]]:
        return {key: {v: i for i, v in enumerate(values)} for key, values in self.properties}

    def position(self, key: str) -> int:
        try:
            return self._positions[key]
        except KeyError:
            raise DataError(f"unknown property key {key!r}") from None

    def values(self, key: str) -> tuple[str, ...]:
        return self.properties[self.position(key)][1]

    def size(self, key: str) -> int:
        return len(self.values(key))

    def value_index(self, key: str, label: str) -> int:
        index = self._value_index[self.keys[self.position(key)]].get(label)
        if index is None:
            raise DataError(f"unknown value {label!r} for property {key!r}")
        return index

    @cached_property
    def feature_offsets(self) -> tuple[int, ...]:
        offsets, total = [], 0
        for _, values in self.properties:
            offsets.append(total)
            total += len(values)
        return tuple(offsets)

    @property
    def feature_size(self) -> int:
        return sum(len(values) for _, values in self.properties)


@dataclass(frozen=True)
class Item:
    item_id: str
    props: tuple[int, ...]  # value index per property, schema order


@dataclass(frozen=True)
class Catalog:
    """Items in load order with a total property function ``f(i, k)``."""

    schema: PropertySchema
    items: tuple[Item, ...]

    def __post_init__(self) -> None:
        n_keys = len(self.schema.keys)
        seen: set[str] = set()
        for position, item in enumerate(self.items):
            if item.item_id in seen:
                raise DataError(f"duplicate item_id {item.item_id!r} (items[{position}])")
            seen.add(item.item_id)
            if len(item.props) != n_keys:
                raise DataError(f"item {item.item_id!r} (items[{position}]) has {len(item.props)} properties, expected {n_keys}")
            for (key, values), index in zip(self.schema.properties, item.props):
                if not 0 <= index < len(values):
                    raise DataError(f"item {item.item_id!r}: value index {index} out of range for {key!r}")

    def __len__(self) -> int:
        return len(self.items)

    @cached_property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(item.item_id for item in self.items)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {item_id: i for i, item_id in enumerate(self.item_ids)}

    def __contains__(self, item_id: object) -> bool:
        return item_id in self._index

    def position(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise DataError(f"unknown item_id {item_id!r}") from None

    def positions(self, item_ids: Iterable[str]) -> np.ndarray:
        return np.fromiter((self.position(i) for i in item_ids), dtype=np.intp)

    @cached_property
    def value_matrix(self) -> np.ndarray:
        """``(n_items, n_properties)`` array of value indices."""
        matrix = np.array([item.props for item in self.items], dtype=np.intp).reshape(len(self.items), len(self.schema.keys))
        matrix.setflags(write=False)
        return matrix

    @cached_property
    def features(self) -> np.ndarray:
        """Concatenated one-hot encoding of every property, schema order."""
        matrix = np.zeros((len(self.items), self.schema.feature_size))
        rows = np.arange(len(self.items))
        for column, offset in enumerate(self.schema.feature_offsets):
            matrix[rows, offset + self.value_matrix[:, column]] = 1.0
        matrix.setflags(write=False)
        return matrix

    @cached_property
    def id_order(self) -> np.ndarray:
        """Rank of each item's id in ascending string order (tie-break key)."""
        order = np.empty(len(self.items), dtype=np.intp)
        order[sorted(range(len(self.items)), key=self.item_ids.__getitem__)] = np.arange(len(self.items))
        order.setflags(write=False)
        return order

    def feature_vector(self, item_id: str) -> np.ndarray:
        return self.features[self.position(item_id)]

    def to_dict(self) -> dict:
        return {
            "properties": {key: list(values) for key, values in self.schema.properties},
            "items": [
                {
                    "id": item.item_id,
                    "props": {key: values[index] for (key, values), index in zip(self.schema.properties, item.props)},
                }
                for item in self.items
            ],
        }

    @classmethod
    def from_dict(cls, data: object) -> Catalog:
        if not isinstance(data, dict):
            raise DataError("catalog must be a JSON object")
        for name in ("properties", "items"):
            if name not in data:
                raise DataError(f"catalog is missing {name!r}")
        properties = data["properties"]
        if not isinstance(properties, dict) or not all(isinstance(v, list) for v in properties.values()):
            raise DataError("'properties' must map each key to a list of value labels")
        schema = PropertySchema.from_mapping(properties)
        if not isinstance(data["items"], list):
            raise DataError("'items' must be a list")
        items = []
        for position, raw in enumerate(data["items"]):
            where = f"items[{position}]"
            if not isinstance(raw, dict) or "id" not in raw:
                raise DataError(f"{where}: item must be an object with an 'id'")
            item_id = str(raw["id"])
            props = raw.get("props", {})
            if not isinstance(props, dict):
                raise DataError(f"{where} ({item_id!r}): 'props' must be an object")
            unknown = [k for k in props if k not in schema.keys]
            if unknown:
                raise DataError(f"{where} ({item_id!r}): unknown property key {unknown[0]!r}")
            indices = []
            for key in schema.keys:
                if key not in props:
                    raise DataError(f"{where} ({item_id!r}): missing property {key!r}")
                try:
                    indices.append(schema.value_index(key, str(props[key])))
                except DataError as exc:
                    raise DataError(f"{where} ({item_id!r}): {exc}") from None
            items.append(Item(item_id, tuple(indices)))
        return cls(schema, tuple(items))


def load_catalog(path: str | Path) -> Catalog:
    """Read a catalog JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read catalog {str(path)!r}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return Catalog.from_dict(data)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    Path(path).write_text(json.dumps(catalog.to_dict(), indent=1) + "\n", encoding="utf-8")


def property_value(catalog: Catalog, item_id: str, key: str) -> int:
    """Dense value index of property ``key`` for ``item_id``."""
    column = catalog.schema.position(key)
    return catalog.items[catalog.position(item_id)].props[column]


@dataclass(frozen=True, eq=False)
class GlobalModel:
    """Prior over items (``item_dist``) and its smoothed per-property pushforwards."""

    item_dist: Categorical
    value_dists: Mapping[str, Categorical] = field(default_factory=dict)
    smoothing_epsilon: float = DEFAULT_SMOOTHING_EPSILON

    @classmethod
    def from_item_probs(
        cls,
        catalog: Catalog,
        item_probs: Sequence[float] | np.ndarray,
        smoothing_epsilon: float = DEFAULT_SMOOTHING_EPSILON,
    ) -> GlobalModel:
        if not 0.0 <= smoothing_epsilon < 1.0:
            raise ValueError(f"smoothing_epsilon must be in [0, 1), got {smoothing_epsilon!r}")
        item_dist = Categorical(item_probs)
        if item_dist.support_size != len(catalog):
            raise ValueError("item distribution does not match catalog size")
        value_dists = {}
        for column, key in enumerate(catalog.schema.keys):
            size = catalog.schema.size(key)
            pushed = np.bincount(catalog.value_matrix[:, column], weights=item_dist.probs, minlength=size)
            if smoothing_epsilon > 0:
                pushed = (1.0 - smoothing_epsilon) * pushed + smoothing_epsilon / size
            value_dists[key] = Categorical(pushed / pushed.sum())
        return cls(item_dist, value_dists, smoothing_epsilon)

    def item_prob(self, catalog: Catalog, item_id: str) -> float:
        return self.item_dist[catalog.position(item_id)]


def fit_global_model(
    catalog: Catalog,
    events: Iterable | None = None,
    smoothing_epsilon: float = DEFAULT_SMOOTHING_EPSILON,
) -> GlobalModel:
    """Estimate the item prior from event counts with add-one smoothing.

    ``events`` holds item ids or objects with an ``item_id`` attribute.  With no
    events the prior is uniform.  Events naming items outside the catalog are
    skipped and counted in a warning.
    """
    if len(catalog) == 0:
        raise DataError("empty catalog")
    if not (0.0 <= smoothing_epsilon < 1.0) or math.isnan(smoothing_epsilon):
        raise ValueError(f"smoothing_epsilon must be in [0, 1), got {smoothing_epsilon!r}")
    counts = np.ones(len(catalog))
    if events is None:
        return GlobalModel.from_item_probs(catalog, counts / counts.sum(), smoothing_epsilon)
    unknown = 0
    for event in events:
        item_id = event if isinstance(event, str) else event.item_id
        position = catalog._index.get(item_id)
        if position is None:
            unknown += 1
            continue
        counts[position] += 1
    if unknown:
        logger.warning("skipped %d events referencing items not in the catalog", unknown)
    return GlobalModel.from_item_probs(catalog, counts / counts.sum(), smoothing_epsilon)
