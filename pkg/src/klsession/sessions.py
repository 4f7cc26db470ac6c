"""Event log ingestion and splitting of per-user event flows into sessions.

A user's session ends when the next event is more than ``max_gap`` seconds
later, or right after a purchase (the purchase is the session's last event).
"""
from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from itertools import groupby
from pathlib import Path

from .errors import DataError

logger = logging.getLogger(__name__)

EVENT_TYPES = ("view", "purchase")
CSV_HEADER = ("user_id", "item_id", "timestamp", "event_type")
DEFAULT_MAX_GAP = 1800


@dataclass(frozen=True, slots=True)
class Event:
    user_id: str
    item_id: str
    timestamp: int
    event_type: str = "view"


@dataclass(frozen=True)
class Session:
    user_id: str
    items: tuple[str, ...]
    timestamps: tuple[int, ...] = ()
    ended_by: str = "end-of-log"
    event_types: tuple[str, ...] = ()
    index: int = 0

    def __post_init__(self) -> None:
        if not self.timestamps:
            object.__setattr__(self, "timestamps", tuple(range(len(self.items))))
        if not self.event_types:
            object.__setattr__(self, "event_types", ("view",) * len(self.items))
        if not (len(self.items) == len(self.timestamps) == len(self.event_types)):
            raise ValueError("items, timestamps and event_types must have equal length")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def session_id(self) -> str:
        return f"{self.user_id}:{self.index}"

    @classmethod
    def of(cls, items: Iterable[str], user_id: str = "anonymous") -> Session:
        return cls(user_id, tuple(items))

    def head(self, length: int) -> Session:
        """The first ``length`` events as a session of its own."""
        return Session(
            self.user_id,
            self.items[:length],
            self.timestamps[:length],
            "end-of-log",
            self.event_types[:length],
            self.index,
        )


def session_items(session: Session | Sequence[str]) -> Sequence[str]:
    return session.items if isinstance(session, Session) else session


def parse_events(rows: Iterable[dict[str, str]]) -> tuple[list[Event], int]:
    """Parse CSV dict rows, returning events sorted by (user, time, input order) and the skip count."""
    events, skipped = [], 0
    for row in rows:
        try:
            user_id = row["user_id"]
            item_id = row["item_id"]
            timestamp = int(row["timestamp"])
            event_type = row["event_type"]
        except (KeyError, TypeError, ValueError):
            skipped += 1
            continue
        if not user_id or not item_id or timestamp < 0 or event_type not in EVENT_TYPES:
            skipped += 1
            continue
        events.append(Event(user_id, item_id, timestamp, event_type))
    events.sort(key=lambda e: (e.user_id, e.timestamp))
    return events, skipped


def load_events(path: str | Path) -> list[Event]:
    """Read an events CSV; bad rows are skipped with a counted warning."""
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read events {str(path)!r}: {exc.strerror or exc}") from None
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DataError(f"{path}: missing header row")
        missing = [name for name in CSV_HEADER if name not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: header is missing columns {missing}")
        events, skipped = parse_events(reader)
    if skipped:
        logger.warning("%s: skipped %d malformed or unsupported rows", path, skipped)
    return events


def write_events(events: Iterable[Event], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for e in events:
            writer.writerow((e.user_id, e.item_id, e.timestamp, e.event_type))


def _split_user(user_id: str, events: list[Event], max_gap: int) -> Iterator[Session]:
    start = 0
    index = 0
    for pos in range(1, len(events) + 1):
        if pos == len(events):
            reason = "end-of-log"
        elif events[pos - 1].event_type == "purchase":
            reason = "purchase"
        elif events[pos].timestamp - events[pos - 1].timestamp > max_gap:
            reason = "gap"
        else:
            continue
        chunk = events[start:pos]
        if reason == "end-of-log" and chunk[-1].event_type == "purchase":
            reason = "purchase"
        yield Session(
            user_id,
            tuple(e.item_id for e in chunk),
            tuple(e.timestamp for e in chunk),
            reason,
            tuple(e.event_type for e in chunk),
            index,
        )
        start = pos
        index += 1


def split_sessions(events: Sequence[Event], max_gap: int = DEFAULT_MAX_GAP) -> list[Session]:
    """Split events (sorted as by ``load_events``) into sessions, ordered by user then time."""
    if max_gap <= 0:
        raise ValueError(f"max_gap must be positive, got {max_gap!r}")
    sessions: list[Session] = []
    for user_id, group in groupby(events, key=lambda e: e.user_id):
        sessions.extend(_split_user(user_id, list(group), max_gap))
    return sessions
