from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from . import __version__
from .errors import EmptyCorpusError, OSVPropError
from .fetch import fetch_dumps
from .ingest import to_day
from .pipeline import IngestFailure, PipelineConfig, run_pipeline, snapshot_checks

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_EMPTY_CORPUS = 2

log = logging.getLogger("osvprop")

# Config-file keys accepted by `analyze --config`.
_CONFIG_KEYS = {
    "input_paths", "cutoff", "window_start", "top_k", "related_generates_events",
    "min_cves_per_ecosystem", "alpha", "output_dir", "workers", "fetch_ecosystems",
}


def _date(value: str) -> int:
    try:
        return to_day(dt.date.fromisoformat(value))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {value!r}") from None


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osvprop",
        description="Trace CVE propagation across OSV ecosystems.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", help="build the event log and write the report bundle")
    an.add_argument("--config", type=Path, help="JSON config file; flags override it")
    an.add_argument("--input", dest="input_paths", nargs="+", metavar="PATH")
    an.add_argument("--cutoff", type=_date, help="last admissible day (YYYY-MM-DD)")
    an.add_argument("--window-start", type=_date, help="first admissible day (default 2000-01-01)")
    an.add_argument("--top-k", type=_positive)
    an.add_argument("--no-related-events", dest="related_generates_events",
                    action="store_false", default=None,
                    help="do not generate events for CVEs listed only in 'related'")
    an.add_argument("--min-cves", dest="min_cves_per_ecosystem", type=int)
    an.add_argument("--alpha", type=float)
    an.add_argument("--workers", type=_positive)
    an.add_argument("--out", dest="output_dir", type=str)
    an.add_argument("--full-snapshot", action="store_true",
                    help="warn when headline figures look implausible for a full OSV snapshot")

    fe = sub.add_parser("fetch", help="download OSV all.zip dumps")
    fe.add_argument("--ecosystem", dest="ecosystems", nargs="*", default=[])
    fe.add_argument("--out", type=Path, required=True)
    fe.add_argument("--base-url", default=None, help=argparse.SUPPRESS)
    return parser


def _load_config_file(path: Path) -> dict[str, Any]:
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    for key in ("cutoff", "window_start"):
        if key in data:
            data[f"{key}_day"] = to_day(dt.date.fromisoformat(data.pop(key)))
    return data


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    values: dict[str, Any] = _load_config_file(args.config) if args.config else {}
    overrides = {
        "input_paths": args.input_paths,
        "cutoff_day": args.cutoff,
        "window_start_day": args.window_start,
        "top_k": args.top_k,
        "related_generates_events": args.related_generates_events,
        "min_cves_per_ecosystem": args.min_cves_per_ecosystem,
        "alpha": args.alpha,
        "workers": args.workers,
        "output_dir": args.output_dir,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    for required, flag in (("input_paths", "--input"), ("cutoff_day", "--cutoff"),
                           ("output_dir", "--out")):
        if required not in values:
            raise ValueError(f"{flag} is required (flag or config file)")
    return PipelineConfig(**values)


def _analyze(args: argparse.Namespace) -> int:
    try:
        config = config_from_args(args)
    except (ValueError, OSError) as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_FAILURE
    try:
        report = run_pipeline(config)
    except EmptyCorpusError as exc:
        log.error("empty corpus: %s", exc)
        return EXIT_EMPTY_CORPUS
    except IngestFailure as exc:
        log.error("%s", exc)
        return EXIT_FAILURE
    except (OSError, OSVPropError) as exc:
        log.error("%s", exc)
        return EXIT_FAILURE
    if args.full_snapshot:
        for warning in snapshot_checks(report):
            log.warning("snapshot check: %s", warning)
    print(
        f"{report.n_cves} CVEs, {report.n_ecosystems} ecosystems, "
        f"{len(report.ranking)} sequences ({report.multi_sequences} multi), "
        f"H1 {report.h1.verdict}; bundle written to {config.output_dir}"
    )
    return EXIT_OK


def _fetch(args: argparse.Namespace) -> int:
    kwargs = {"base_url": args.base_url} if args.base_url else {}
    try:
        entries = fetch_dumps(args.ecosystems, args.out, **kwargs)
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_FAILURE
    if entries and not any(e["ok"] for e in entries):
        log.error("all downloads failed")
        return EXIT_FAILURE
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "analyze":
        return _analyze(args)
    return _fetch(args)


if __name__ == "__main__":
    sys.exit(main())
