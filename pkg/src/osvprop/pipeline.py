"""End-to-end analysis: ingest, event log, mining, tests, report bundle."""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .errors import EmptyCorpusError, OSVPropError
from .event_log import EventLog, Trace, Window, all_traces, build_event_log, events_csv_text
from .ingest import IngestStats, VulnRecord, from_day, ingest_paths, to_day
from .mining import (
    DelayRecord,
    DelaySummary,
    LengthDistribution,
    SequenceRanking,
    BoxplotRow,
    delay_summary,
    delays,
    encode_key,
    frequency_ranking,
    length_distribution,
    single_ecosystem_share,
    top_k,
)
from .stats import (
    EcosystemTestResult,
    H1Result,
    SeverityCheck,
    SeverityTable,
    corrected_alpha,
    h1_verdict,
    h2_presence_tests,
    severity_by_cve,
    severity_delay_check,
)

log = logging.getLogger(__name__)

DEFAULT_WINDOW_START = to_day(dt.date(2000, 1, 1))

REPORT_FILE = "report.json"
EVENTS_FILE = "events.csv"
SEQUENCES_FILE = "sequences.csv"
DELAYS_FILE = "delays.csv"
BOXPLOT_FILE = "delay_boxplot.csv"
TESTS_FILE = "tests.csv"
H1_FILE = "h1.json"

SEQUENCES_HEADER = ("rank", "key", "count", "share")
DELAYS_HEADER = ("cve", "m", "delay_days")
BOXPLOT_HEADER = ("m", "q1", "median", "q3", "lo_whisker", "hi_whisker", "n_outliers")
TESTS_HEADER = (
    "ecosystem", "n_present", "n_absent", "mean_present", "mean_absent",
    "t", "df", "p", "significant", "direction", "status",
)


class IngestFailure(OSVPropError):
    def __init__(self, errors: Sequence[str]) -> None:
        self.errors = list(errors)
        super().__init__(f"{len(self.errors)} input file(s) could not be read")


@dataclass
class PipelineConfig:
    input_paths: list[str]
    cutoff_day: int
    output_dir: str
    window_start_day: int = DEFAULT_WINDOW_START
    top_k: int = 30
    related_generates_events: bool = True
    min_cves_per_ecosystem: int = 1
    alpha: float = 0.05
    fetch_ecosystems: list[str] | None = None
    # Execution-only knob; never echoed, output must not depend on it.
    workers: int | None = None

    def __post_init__(self) -> None:
        if self.window_start_day >= self.cutoff_day:
            raise ValueError("window start must precede the cutoff date")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.min_cves_per_ecosystem < 0:
            raise ValueError("min_cves_per_ecosystem must be >= 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def window(self) -> Window:
        return Window(self.window_start_day, self.cutoff_day)

    def echo(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "cutoff": from_day(self.cutoff_day).isoformat(),
            "input_paths": sorted(str(p) for p in self.input_paths),
            "min_cves_per_ecosystem": self.min_cves_per_ecosystem,
            "related_generates_events": self.related_generates_events,
            "top_k": self.top_k,
            "window_start": from_day(self.window_start_day).isoformat(),
        }


@dataclass
class Report:
    config: PipelineConfig
    log: EventLog
    traces: dict[str, Trace]
    ranking: SequenceRanking
    lengths: LengthDistribution
    delay_records: list[DelayRecord]
    delay_summary: DelaySummary
    h1: H1Result
    h2: list[EcosystemTestResult]
    alpha_corrected: float
    severity_table: SeverityTable
    severity: SeverityCheck
    ingest_stats: IngestStats
    version: str = __version__
    files: list[str] = field(default_factory=list)

    @property
    def n_cves(self) -> int:
        return len(self.traces)

    @property
    def n_ecosystems(self) -> int:
        return len(self.log.ecosystem_set)

    @property
    def multi_sequences(self) -> int:
        return sum(1 for row in self.ranking.rows if len(row.key) > 1)


def analyze(
    event_log: EventLog,
    records: Iterable[VulnRecord],
    ingest_stats: IngestStats,
    config: PipelineConfig,
) -> Report:
    """Run mining and the hypothesis tests over a built event log."""
    if not event_log.events:
        raise EmptyCorpusError("no events survived ingestion and window filters")
    traces = all_traces(event_log)
    delay_records = delays(traces)
    h2 = h2_presence_tests(
        traces,
        delay_records,
        config.alpha,
        min_cves=config.min_cves_per_ecosystem,
        ecosystems=event_log.ecosystem_set,
    )
    sev_table = severity_by_cve(r for r in records if r.cve_refs & event_log.cve_set)
    return Report(
        config=config,
        log=event_log,
        traces=traces,
        ranking=frequency_ranking(traces),
        lengths=length_distribution(traces),
        delay_records=delay_records,
        delay_summary=delay_summary(delay_records, group_by_m=True),
        h1=h1_verdict(delay_records),
        h2=h2,
        alpha_corrected=corrected_alpha(config.alpha, len(event_log.ecosystem_set)),
        severity_table=sev_table,
        severity=severity_delay_check(sev_table.records, delay_records),
        ingest_stats=ingest_stats,
    )


def run_pipeline(config: PipelineConfig, *, write: bool = True) -> Report:
    ingested = ingest_paths(
        config.input_paths,
        include_related=config.related_generates_events,
        workers=config.workers,
    )
    if ingested.errors:
        for err in sorted(ingested.errors):
            log.error("%s", err)
        raise IngestFailure(sorted(ingested.errors))
    event_log, build_stats = build_event_log(ingested.events, config.window)
    stats = ingested.stats
    stats.duplicate_events_collapsed += build_stats.duplicate_events_collapsed
    stats.events_out_of_window += build_stats.events_out_of_window
    log.info(
        "ingested %d records, %d events, %d log entries",
        stats.records_seen, stats.events_emitted, len(event_log),
    )
    report = analyze(event_log, ingested.records, stats, config)
    if write:
        write_bundle(report, config.output_dir)
    return report


# ---------------------------------------------------------------------------
# Serialization

def _num(value: float | None) -> float | None:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return None
    return value


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and not math.isfinite(value):
        return ""
    return str(value)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


def _boxplot_dict(row: BoxplotRow) -> dict[str, Any]:
    return {
        "m": row.group,
        "n": row.n,
        "mean": row.mean,
        "min": row.minimum,
        "q1": row.q1,
        "median": row.median,
        "q3": row.q3,
        "max": row.maximum,
        "lo_whisker": row.lo_whisker,
        "hi_whisker": row.hi_whisker,
        "n_outliers": row.n_outliers,
    }


def _test_dict(res: EcosystemTestResult) -> dict[str, Any]:
    return {
        "ecosystem": res.ecosystem,
        "n_present": res.n_present,
        "n_absent": res.n_absent,
        "mean_present": _num(res.mean_present),
        "mean_absent": _num(res.mean_absent),
        "t": _num(res.t_stat),
        "df": _num(res.df),
        "p": _num(res.p_value),
        "significant": res.significant,
        "direction": res.direction.value,
        "status": res.status.value,
    }


def h1_payload(report: Report) -> dict[str, Any]:
    corr = report.h1.correlation
    return {
        "n": corr.n if corr else len(report.delay_records),
        "r": corr.r if corr else None,
        "verdict": report.h1.verdict,
    }


def report_payload(report: Report) -> dict[str, Any]:
    lengths = report.lengths
    summary = report.delay_summary
    sev = report.severity
    github_only = single_ecosystem_share(report.traces, "GitHub")
    return {
        "tool": {"name": "osvprop", "version": report.version},
        "config": report.config.echo(),
        "corpus": {
            "n_cves": report.n_cves,
            "n_ecosystems": report.n_ecosystems,
            "ecosystems": sorted(report.log.ecosystem_set),
            "n_log_entries": len(report.log),
            "unique_sequences": len(report.ranking),
            "multi_ecosystem_sequences": report.multi_sequences,
            "multi_ecosystem_cves": len(report.delay_records),
            "github_only_share": github_only,
            "first_day": from_day(min(report.log.events.values())).isoformat(),
            "last_day": from_day(max(report.log.events.values())).isoformat(),
        },
        "ingest": report.ingest_stats.as_dict(),
        "ranking": {
            "total_cves": report.ranking.total_cves,
            "top_k": report.config.top_k,
            "rows": [
                {"rank": i, "key": list(row.key), "count": row.count, "share": row.share}
                for i, row in enumerate(report.ranking.rows, start=1)
            ],
        },
        "lengths": {
            "histogram": {str(m): n for m, n in lengths.histogram.items()},
            "n": lengths.n,
            "mean": lengths.mean,
            "median": lengths.median,
            "n_multi": lengths.n_multi,
            "mean_multi": lengths.mean_multi,
            "median_multi": lengths.median_multi,
        },
        "delays": {
            "empty": summary.is_empty,
            "overall": _boxplot_dict(summary.overall) if summary.overall else None,
            "by_m": [_boxplot_dict(row) for row in summary.by_m],
        },
        "h1": {
            **h1_payload(report),
            "p_value": report.h1.correlation.p_value if report.h1.correlation else None,
        },
        "h2": {
            "alpha": report.config.alpha,
            "alpha_corrected": report.alpha_corrected,
            "n_ecosystems": report.n_ecosystems,
            "n_tested": sum(1 for t in report.h2 if t.status.value == "tested"),
            "n_significant": sum(1 for t in report.h2 if t.significant),
            "tests": [_test_dict(t) for t in report.h2],
        },
        "severity": {
            "n_scored_cves": len(report.severity_table.records),
            "malformed_vectors": report.severity_table.malformed_vectors,
            "records_excluded": report.severity_table.records_excluded,
            "n_joined": sev.n_joined,
            "n_unmatched": sev.n_unmatched,
            "r": sev.correlation.r if sev.correlation else None,
            "p_value": sev.correlation.p_value if sev.correlation else None,
            "verdict": sev.verdict,
        },
        "files": sorted(report.files),
    }


def dumps_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def plot_data_files(report: Report) -> dict[str, str]:
    """Contents of the plot/test CSVs and h1.json, keyed by file name."""
    shown = top_k(report.ranking, report.config.top_k)
    boxplot_rows = [
        (r.group, r.q1, r.median, r.q3, r.lo_whisker, r.hi_whisker, r.n_outliers)
        for r in report.delay_summary.by_m
    ]
    tests = [tuple(_test_dict(t).values()) for t in report.h2]
    return {
        SEQUENCES_FILE: _csv_text(
            SEQUENCES_HEADER,
            ((i, encode_key(r.key), r.count, r.share) for i, r in enumerate(shown.rows, 1)),
        ),
        DELAYS_FILE: _csv_text(
            DELAYS_HEADER, ((d.cve, d.m, d.delay_days) for d in report.delay_records)
        ),
        BOXPLOT_FILE: _csv_text(BOXPLOT_HEADER, boxplot_rows),
        TESTS_FILE: _csv_text(TESTS_HEADER, tests),
        H1_FILE: dumps_json(h1_payload(report)),
    }


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


def emit_plot_data(report: Report, output_dir: str | Path) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in plot_data_files(report).items():
        _write(out / name, text)
        written.append(out / name)
    return written


def write_bundle(report: Report, output_dir: str | Path) -> list[Path]:
    """Write report.json, events.csv and the plot data into ``output_dir``."""
    out = Path(output_dir)
    written = emit_plot_data(report, out)
    _write(out / EVENTS_FILE, events_csv_text(report.log))
    written.append(out / EVENTS_FILE)
    report.files = sorted(p.name for p in written) + [REPORT_FILE]
    _write(out / REPORT_FILE, dumps_json(report_payload(report)))
    written.append(out / REPORT_FILE)
    return sorted(written)


# ---------------------------------------------------------------------------
# Sanity checks against a full snapshot

REFERENCE_CVE_COUNT = 84_520


def snapshot_checks(report: Report) -> list[str]:
    """Warnings for a full-snapshot run whose headline figures look off.

    Reference: the April 2025 OSV snapshot had 84,520 CVEs, about 14% of
    them GitHub-only, and a median multi-ecosystem delay of about two years.
    """
    warnings = []
    n = report.n_cves
    if not REFERENCE_CVE_COUNT / 10 <= n <= REFERENCE_CVE_COUNT * 10:
        warnings.append(f"CVE count {n} is not within an order of magnitude of {REFERENCE_CVE_COUNT}")
    share = single_ecosystem_share(report.traces, "GitHub")
    if not 0.05 <= share <= 0.30:
        warnings.append(f"GitHub-only share {share:.3f} outside [0.05, 0.30]")
    overall = report.delay_summary.overall
    if overall is None:
        warnings.append("no multi-ecosystem traces: delay median unavailable")
    elif not 365 <= overall.median <= 4 * 365:
        warnings.append(f"median delay {overall.median} days outside [1, 4] years")
    return warnings
