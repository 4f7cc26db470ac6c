"""Leave-last-out evaluation with hit and simplified DCG at several cut-offs."""
from __future__ import annotations

import csv
import io
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

from .catalog import Catalog, GlobalModel
from .detection import AlphaSpec, ThresholdTable, detect_interest
from .errors import DataError
from .rerank import RankedList, Scorer, base_recommend, recommend
from .sessions import Session

logger = logging.getLogger(__name__)

DEFAULT_NS = (5, 10, 20)
ENHANCED_PREFIX = "kl-"
REPORT_HEADER = ("algorithm", "N", "sessions", "mean_dcg", "mean_hit")


def leave_last_out(session: Session) -> tuple[Session, str] | None:
    """Split into (all-but-last history, last item); ``None`` when shorter than 2."""
    if len(session) < 2:
        return None
    return session.head(len(session) - 1), session.items[-1]


def _rank(recommendations: RankedList | Sequence[str], target: str, n: int) -> int | None:
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n!r}")
    ids = recommendations.item_ids if isinstance(recommendations, RankedList) else list(recommendations)
    for rank, item_id in enumerate(ids[:n], start=1):
        if item_id == target:
            return rank
    return None


def dcg_at(recommendations: RankedList | Sequence[str], target: str, n: int) -> float:
    rank = _rank(recommendations, target, n)
    return 0.0 if rank is None else 1.0 / math.log2(rank + 1)


def hit_at(recommendations: RankedList | Sequence[str], target: str, n: int) -> int:
    return int(_rank(recommendations, target, n) is not None)


@dataclass(frozen=True)
class Algorithm:
    """A base scorer, optionally enhanced by detected session interest."""

    scorer: str
    enhanced: bool = False

    @property
    def name(self) -> str:
        return (ENHANCED_PREFIX if self.enhanced else "") + self.scorer

    @classmethod
    def parse(cls, name: str) -> Algorithm:
        enhanced = name.startswith(ENHANCED_PREFIX)
        scorer = name[len(ENHANCED_PREFIX):] if enhanced else name
        Scorer(scorer)
        return cls(scorer, enhanced)


@dataclass(frozen=True)
class EvalRecord:
    session_id: str
    algorithm: str
    n: int
    dcg: float
    hit: int


@dataclass(frozen=True)
class EvalRow:
    algorithm: str
    n: int
    sessions: int
    mean_dcg: float
    mean_hit: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    skipped: int

    def row(self, algorithm: str, n: int) -> EvalRow:
        for row in self.rows:
            if row.algorithm == algorithm and row.n == n:
                return row
        raise KeyError((algorithm, n))

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for r in self.rows:
            writer.writerow((r.algorithm, r.n, r.sessions, repr(r.mean_dcg), repr(r.mean_hit)))
        return buffer.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def format_table(self) -> str:
        lines = [f"{'algorithm':<20} {'N':>4} {'sessions':>9} {'mean_dcg':>9} {'mean_hit':>9}"]
        for r in self.rows:
            lines.append(f"{r.algorithm:<20} {r.n:>4} {r.sessions:>9} {r.mean_dcg:>9.4f} {r.mean_hit:>9.4f}")
        if self.skipped:
            lines.append(f"({self.skipped} sessions shorter than 2 events skipped)")
        return "\n".join(lines)


def evaluate_session(
    session: Session,
    algorithms: Sequence[Algorithm],
    ns: Sequence[int],
    global_model: GlobalModel,
    catalog: Catalog,
    table: ThresholdTable | None = None,
    candidates: int | None = None,
    alpha: AlphaSpec | None = None,
) -> list[EvalRecord]:
    split = leave_last_out(session)
    if split is None:
        return []
    history, target = split
    depth = max(ns)
    report = None
    records = []
    for algorithm in algorithms:
        scorer = Scorer(algorithm.scorer)
        if algorithm.enhanced:
            if table is None:
                raise DataError("enhanced algorithms need a threshold table")
            if report is None:
                report = detect_interest(history, table, global_model, catalog, alpha)
            ranked = recommend(history, scorer, report, depth, global_model, catalog, candidates=candidates)
        else:
            ranked = base_recommend(history, scorer, depth, global_model, catalog)
        for n in ns:
            records.append(EvalRecord(session.session_id, algorithm.name, n, dcg_at(ranked, target, n), hit_at(ranked, target, n)))
    return records


def evaluate(
    sessions: Iterable[Session],
    algorithms: Sequence[Algorithm | str],
    ns: Sequence[int] = DEFAULT_NS,
    *,
    global_model: GlobalModel,
    catalog: Catalog,
    table: ThresholdTable | None = None,
    alpha: AlphaSpec | None = None,
    candidates: int | None = None,
    output: str | Path | None = None,
) -> EvalReport:
    """Mean DCG and hit per algorithm and cut-off over all sessions of length >= 2.

    Interest for enhanced algorithms is detected on the history only.  Means
    use exactly rounded summation, so they do not depend on session order.
    """
    algos = [a if isinstance(a, Algorithm) else Algorithm.parse(a) for a in algorithms]
    if not algos:
        raise ValueError("no algorithms to evaluate")
    if not ns or min(ns) < 1:
        raise ValueError("cut-offs must be >= 1")
    ns = sorted(set(ns))
    dcgs: dict[tuple[str, int], list[float]] = {(a.name, n): [] for a in algos for n in ns}
    hits: dict[tuple[str, int], list[int]] = {(a.name, n): [] for a in algos for n in ns}
    evaluated = skipped = 0
    for session in sessions:
        records = evaluate_session(session, algos, ns, global_model, catalog, table, candidates, alpha)
        if not records:
            skipped += 1
            continue
        evaluated += 1
        for record in records:
            dcgs[record.algorithm, record.n].append(record.dcg)
            hits[record.algorithm, record.n].append(record.hit)
    if evaluated == 0:
        raise DataError("no evaluable sessions (every session has fewer than 2 events)")
    if skipped:
        logger.warning("skipped %d sessions shorter than 2 events", skipped)
    rows = tuple(
        EvalRow(a.name, n, evaluated, math.fsum(dcgs[a.name, n]) / evaluated, math.fsum(hits[a.name, n]) / evaluated)
        for a in algos
        for n in ns
    )
    report = EvalReport(rows, skipped)
    if output is not None:
        report.save(output)
    return report
