"""Command-line front end: calibrate, detect, recommend, simulate, evaluate.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path

from .catalog import Catalog, GlobalModel, fit_global_model, load_catalog, save_catalog
from .config import Config, load_config
from .detection import AlphaSpec, ThresholdTable, calibrate_thresholds, detect_interest
from .errors import ConfigError, DataError
from .evaluation import DEFAULT_NS, Algorithm, evaluate
from .rerank import Scorer, recommend
from .sessions import Session, load_events, split_sessions, write_events
from .simulator import session_events, simulate_sessions, synth_catalog

logger = logging.getLogger("klsession")

EXIT_USAGE = 1
EXIT_DATA = 2

DEFAULT_SCHEMA = {"color": 8, "brand": 12, "size": 5, "material": 6}
DEFAULT_ALGORITHMS = "popularity,kl-popularity,static,kl-static,uniform,kl-uniform"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--alpha", type=float, help="smoothing rate for every property")
    parser.add_argument("--smoothing-epsilon", type=float, dest="smoothing_epsilon")
    parser.add_argument("-v", "--verbose", action="store_true")


def _add_catalog(parser: argparse.ArgumentParser, events_help: str) -> None:
    parser.add_argument("--catalog", required=True)
    parser.add_argument("--events", help=events_help)


def _add_prior(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--prior-events",
        dest="prior_events",
        help="events used to fit the item prior; must match the ones given to calibrate",
    )


def _add_workers(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--workers", type=int, default=1, help="worker threads; 0 uses every CPU")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="klsession", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="calibrate detection thresholds by Monte Carlo")
    _add_catalog(p, "events used to fit the item prior (uniform if omitted)")
    _add_common(p)
    p.add_argument("--significance", type=float)
    p.add_argument("--n-samples", type=int, dest="n_samples")
    p.add_argument("--m-max", type=int, dest="M_max")
    _add_workers(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="write one interest report per session as JSON lines")
    _add_catalog(p, "events log to sessionize and analyze")
    _add_prior(p)
    _add_common(p)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--max-gap", "--max-gap-seconds", type=int, dest="max_gap_seconds")
    p.add_argument("--out", help="output file (standard output if omitted)")

    p = sub.add_parser("recommend", help="rank items for one session")
    p.add_argument("--catalog", required=True)
    _add_prior(p)
    _add_common(p)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--scorer", choices=("static", "uniform", "popularity"), default="popularity")
    p.add_argument("--n", type=int, dest="N")
    p.add_argument("--candidates", type=int, help="re-rank only the base top-N0 list")
    p.add_argument("--session-file", dest="session_file", help="file with one item id per line")
    p.add_argument("items", nargs="*", help="session item ids, oldest first")

    p = sub.add_parser("simulate", help="write a synthetic catalog and events log")
    _add_common(p)
    p.add_argument("--schema", help='JSON: {"properties": {key: n_values | [labels]}, "value_weights": {...}}')
    p.add_argument("--n-items", type=int, dest="n_items", default=300)
    p.add_argument("--sessions", type=int, default=5000)
    p.add_argument("--tilt", type=float, default=3.0)
    p.add_argument("--planted-fraction", type=float, dest="planted_fraction", default=1.0)
    p.add_argument("--popularity-skew", type=float, dest="popularity_skew", default=0.0)
    _add_workers(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("evaluate", help="leave-last-out evaluation of base and enhanced algorithms")
    _add_catalog(p, "events log to sessionize and evaluate")
    _add_prior(p)
    _add_common(p)
    p.add_argument("--thresholds")
    p.add_argument("--algorithms", default=DEFAULT_ALGORITHMS)
    p.add_argument("--n", type=int, nargs="+", dest="ns", help=f"cut-offs (default {' '.join(map(str, DEFAULT_NS))})")
    p.add_argument("--candidates", type=int)
    p.add_argument("--max-gap", "--max-gap-seconds", type=int, dest="max_gap_seconds")
    p.add_argument("--out", required=True)
    return parser


def _config(args: argparse.Namespace) -> Config:
    config = load_config(args.config) if args.config else Config()
    names = ("seed", "alpha", "smoothing_epsilon", "significance", "n_samples", "M_max", "max_gap_seconds", "N")
    return config.override(**{name: getattr(args, name, None) for name in names})


def _workers(args: argparse.Namespace) -> int:
    if args.workers < 0:
        raise UsageError("--workers must be >= 0")
    return args.workers or os.cpu_count() or 1


def _global(catalog: Catalog, events_path: str | None, config: Config) -> GlobalModel:
    events = load_events(events_path) if events_path else None
    return fit_global_model(catalog, events, config.smoothing_epsilon)


def _sessions(events_path: str, catalog: Catalog, config: Config) -> list[Session]:
    sessions = split_sessions(load_events(events_path), config.max_gap_seconds)
    kept, dropped_items, dropped_sessions = [], 0, 0
    for s in sessions:
        mask = [item in catalog for item in s.items]
        if all(mask):
            kept.append(s)
            continue
        dropped_items += mask.count(False)
        if not any(mask):
            dropped_sessions += 1
            continue
        pick = [i for i, ok in enumerate(mask) if ok]
        kept.append(Session(
            s.user_id,
            tuple(s.items[i] for i in pick),
            tuple(s.timestamps[i] for i in pick),
            s.ended_by,
            tuple(s.event_types[i] for i in pick),
            s.index,
        ))
    if dropped_items:
        logger.warning("dropped %d events for items not in the catalog (%d sessions emptied)", dropped_items, dropped_sessions)
    return kept


def _echo(path: Path, config: Config, args: argparse.Namespace, **extra: object) -> None:
    data = {"command": args.command, "config": config.to_dict(), **extra}
    path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


def _table(args: argparse.Namespace, config: Config) -> tuple[ThresholdTable, AlphaSpec | None]:
    """Load thresholds; an alpha given by flag or config file must match calibration."""
    table = ThresholdTable.load(args.thresholds)
    explicit = args.alpha is not None or args.config is not None
    return table, config.alpha if explicit else None


def _provenance(path: str | None) -> dict | None:
    """Name and digest of an input file; the digest, not the location, identifies it."""
    if path is None:
        return None
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"name": Path(path).name, "sha256": digest}


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = _config(args)
    catalog = load_catalog(args.catalog)
    global_model = _global(catalog, args.events, config)
    table = calibrate_thresholds(
        global_model,
        alpha=config.alpha,
        significance=config.significance,
        n_samples=config.n_samples,
        M_max=config.M_max,
        seed=config.seed,
        workers=_workers(args),
        config={**config.to_dict(), "prior_events": _provenance(args.events)},
    )
    table.save(args.out)
    logger.info("wrote thresholds for %d properties to %s", len(table.thresholds), args.out)
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    config = _config(args)
    catalog = load_catalog(args.catalog)
    if not args.events:
        raise UsageError("detect needs --events")
    global_model = _global(catalog, args.prior_events, config)
    table, alpha = _table(args, config)
    lines = []
    for session in _sessions(args.events, catalog, config):
        report = detect_interest(session, table, global_model, catalog, alpha)
        lines.append(json.dumps({"session_id": session.session_id, "user_id": session.user_id, **report.to_dict()}))
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_recommend(args: argparse.Namespace) -> int:
    config = _config(args)
    catalog = load_catalog(args.catalog)
    items = list(args.items)
    if args.session_file:
        text = Path(args.session_file).read_text(encoding="utf-8")
        items += [line.strip() for line in text.splitlines() if line.strip()]
    if not items:
        raise UsageError("recommend needs session items (positional or --session-file)")
    missing = [i for i in items if i not in catalog]
    if missing:
        raise DataError(f"unknown item ids: {missing}")
    global_model = _global(catalog, args.prior_events, config)
    table, alpha = _table(args, config)
    session = Session.of(items)
    report = detect_interest(session, table, global_model, catalog, alpha)
    logger.info("detected interest: %s", ", ".join(report.interests) or "(none)")
    ranked = recommend(session, Scorer(args.scorer), report, config.N, global_model, catalog, candidates=args.candidates)
    for rank, (item_id, score) in enumerate(ranked.entries, start=1):
        sys.stdout.write(f"{rank}\t{item_id}\t{score!r}\n")
    return 0


def _schema(path: str | None) -> tuple[dict, dict | None]:
    if path is None:
        return DEFAULT_SCHEMA, None
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read schema {path!r}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict) or not isinstance(data.get("properties"), dict):
        raise DataError(f"{path}: schema needs a 'properties' object")
    return data["properties"], data.get("value_weights")


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config(args)
    schema, weights = _schema(args.schema)
    if args.n_items < 2 or args.sessions < 1:
        raise UsageError("--n-items must be >= 2 and --sessions >= 1")
    catalog, global_model = synth_catalog(
        args.n_items, schema, config.seed, weights, args.popularity_skew, config.smoothing_epsilon
    )
    simulated = simulate_sessions(
        catalog,
        global_model,
        args.sessions,
        config.seed,
        planted_fraction=args.planted_fraction,
        tilt=args.tilt,
        workers=_workers(args),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_catalog(catalog, out / "catalog.json")
    write_events(session_events(simulated), out / "events.csv")
    with (out / "planted.jsonl").open("w", encoding="utf-8") as handle:
        for sim in simulated:
            planted = {
                key: catalog.schema.values(key)[value] for key, value in sim.planted_values.items()
            }
            handle.write(json.dumps({"user_id": sim.session.user_id, "length": len(sim.session), "planted": planted}) + "\n")
    (out / "prior.json").write_text(
        json.dumps({"item_ids": list(catalog.item_ids), "probs": [float(p) for p in global_model.item_dist.probs]}) + "\n",
        encoding="utf-8",
    )
    _echo(out / "config.json", config, args, n_items=args.n_items, sessions=args.sessions, tilt=args.tilt,
          planted_fraction=args.planted_fraction, popularity_skew=args.popularity_skew, schema=schema, value_weights=weights)
    logger.info("wrote %d sessions over %d items to %s", len(simulated), len(catalog), out)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config(args)
    catalog = load_catalog(args.catalog)
    if not args.events:
        raise UsageError("evaluate needs --events")
    algorithms = [Algorithm.parse(name.strip()) for name in args.algorithms.split(",") if name.strip()]
    table, alpha = (None, None)
    if any(a.enhanced for a in algorithms):
        if not args.thresholds:
            raise UsageError("enhanced algorithms need --thresholds")
        table, alpha = _table(args, config)
    global_model = _global(catalog, args.prior_events, config)
    report = evaluate(
        _sessions(args.events, catalog, config),
        algorithms,
        args.ns or DEFAULT_NS,
        global_model=global_model,
        catalog=catalog,
        table=table,
        alpha=alpha,
        candidates=args.candidates,
        output=args.out,
    )
    _echo(Path(str(args.out) + ".config.json"), config, args, algorithms=[a.name for a in algorithms],
          ns=list(args.ns or DEFAULT_NS), thresholds=args.thresholds)
    sys.stdout.write(report.format_table() + "\n")
    return 0


COMMANDS = {
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "recommend": cmd_recommend,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"klsession {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # Reader went away (e.g. piped into head); silence the flush at exit.
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (DataError, OSError) as exc:
        print(f"klsession {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
