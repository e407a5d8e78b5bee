"""Propagation sequences, trace lengths and traceability delays."""
from __future__ import annotations

import math
import statistics
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

from .errors import EmptyInputError
from .event_log import Trace

SequenceKey = tuple[str, ...]
KEY_SEPARATOR = ">"


def sequence_key(trace: Trace) -> SequenceKey:
    return trace.ecosystems


def encode_key(key: SequenceKey) -> str:
    return KEY_SEPARATOR.join(key)


@dataclass(frozen=True)
class RankingRow:
    key: SequenceKey
    count: int
    share: float


@dataclass(frozen=True)
class SequenceRanking:
    rows: tuple[RankingRow, ...]
    total_cves: int

    def __len__(self) -> int:
        return len(self.rows)


def frequency_ranking(traces: Mapping[str, Trace]) -> SequenceRanking:
    """Count CVEs per sequence, most frequent first.

    Shares are over all CVEs, single-ecosystem traces included.
    """
    if not traces:
        raise EmptyInputError("cannot rank sequences of an empty trace set")
    counts = Counter(sequence_key(t) for t in traces.values())
    total = len(traces)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    rows = tuple(RankingRow(key, n, n / total) for key, n in ordered)
    return SequenceRanking(rows, total)


def top_k(ranking: SequenceRanking, k: int = 30) -> SequenceRanking:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return SequenceRanking(ranking.rows[:k], ranking.total_cves)


@dataclass(frozen=True)
class LengthDistribution:
    histogram: dict[int, int]
    n: int
    mean: float
    median: float
    n_multi: int
    mean_multi: float | None
    median_multi: float | None


def length_distribution(traces: Mapping[str, Trace]) -> LengthDistribution:
    if not traces:
        raise EmptyInputError("no traces")
    lengths = sorted(t.m for t in traces.values())
    multi = [m for m in lengths if m > 1]
    return LengthDistribution(
        histogram=dict(sorted(Counter(lengths).items())),
        n=len(lengths),
        mean=math.fsum(lengths) / len(lengths),
        median=float(statistics.median(lengths)),
        n_multi=len(multi),
        mean_multi=math.fsum(multi) / len(multi) if multi else None,
        median_multi=float(statistics.median(multi)) if multi else None,
    )


def single_ecosystem_share(traces: Mapping[str, Trace], ecosystem: str) -> float:
    if not traces:
        return 0.0
    alone = sum(1 for t in traces.values() if t.ecosystems == (ecosystem,))
    return alone / len(traces)


@dataclass(frozen=True)
class DelayRecord:
    cve: str
    m: int
    delay_days: int


def delays(traces: Mapping[str, Trace]) -> list[DelayRecord]:
    """One record per multi-ecosystem trace, sorted by CVE."""
    return [
        DelayRecord(cve, t.m, t.last_day - t.first_day)
        for cve, t in sorted(traces.items())
        if t.m > 1
    ]


def quantile(sorted_values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile of already sorted data."""
    if not sorted_values:
        raise EmptyInputError("quantile of empty data")
    h = (len(sorted_values) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(sorted_values) - 1)
    return sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo])


@dataclass(frozen=True)
class BoxplotRow:
    group: int | None  # trace length m, or None for the pooled row
    n: int
    mean: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    lo_whisker: float
    hi_whisker: float
    outliers: tuple[float, ...]

    @property
    def n_outliers(self) -> int:
        return len(self.outliers)


def boxplot_row(values: Iterable[float], group: int | None = None) -> BoxplotRow:
    data = sorted(values)
    if not data:
        raise EmptyInputError("boxplot of empty data")
    q1, med, q3 = (quantile(data, q) for q in (0.25, 0.5, 0.75))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = [v for v in data if lo_fence <= v <= hi_fence]
    return BoxplotRow(
        group=group,
        n=len(data),
        mean=math.fsum(data) / len(data),
        minimum=data[0],
        q1=q1,
        median=med,
        q3=q3,
        maximum=data[-1],
        lo_whisker=inside[0],
        hi_whisker=inside[-1],
        outliers=tuple(v for v in data if v < lo_fence or v > hi_fence),
    )


@dataclass(frozen=True)
class DelaySummary:
    overall: BoxplotRow | None
    by_m: tuple[BoxplotRow, ...] = ()

    @property
    def is_empty(self) -> bool:
        return self.overall is None


EMPTY_SUMMARY = DelaySummary(None)


def delay_summary(records: Sequence[DelayRecord], group_by_m: bool = True) -> DelaySummary:
    """Boxplot statistics of delays, pooled and optionally per trace length.

    Outliers lie outside the Tukey fences at 1.5 IQR. An empty input yields
    :data:`EMPTY_SUMMARY`.
    """
    if not records:
        return EMPTY_SUMMARY
    overall = boxplot_row(r.delay_days for r in records)
    by_m: tuple[BoxplotRow, ...] = ()
    if group_by_m:
        groups: dict[int, list[int]] = {}
        for r in records:
            groups.setdefault(r.m, []).append(r.delay_days)
        by_m = tuple(boxplot_row(groups[m], m) for m in sorted(groups))
    return DelaySummary(overall, by_m)
