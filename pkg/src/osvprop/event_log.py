"""Event log of (cve, ecosystem, day) observations and the per-CVE traces."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

from .errors import UnknownCVEError

EVENTS_CSV_HEADER = ("cve", "ecosystem", "day")


class Event(NamedTuple):
    cve: str
    ecosystem: str
    day: int


@dataclass(frozen=True)
class Window:
    """Inclusive range of admissible day numbers."""

    start_day: int
    end_day: int

    def __post_init__(self) -> None:
        if self.start_day > self.end_day:
            raise ValueError(f"empty window [{self.start_day}, {self.end_day}]")

    def __contains__(self, day: int) -> bool:
        return self.start_day <= day <= self.end_day


@dataclass(frozen=True)
class Trace:
    cve: str
    steps: tuple[tuple[str, int], ...]

    @property
    def m(self) -> int:
        return len(self.steps)

    @property
    def ecosystems(self) -> tuple[str, ...]:
        return tuple(eco for eco, _ in self.steps)

    @property
    def first_day(self) -> int:
        return self.steps[0][1]

    @property
    def last_day(self) -> int:
        return self.steps[-1][1]


@dataclass
class EventLog:
    window: Window
    events: dict[tuple[str, str], int] = field(default_factory=dict)

    @cached_property
    def cve_set(self) -> frozenset[str]:
        return frozenset(cve for cve, _ in self.events)

    @cached_property
    def ecosystem_set(self) -> frozenset[str]:
        return frozenset(eco for _, eco in self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return self.window == other.window and self.events == other.events

    def entries(self) -> list[Event]:
        """All entries sorted by (cve, ecosystem)."""
        return [Event(c, a, t) for (c, a), t in sorted(self.events.items())]

    @cached_property
    def _by_cve(self) -> dict[str, list[tuple[str, int]]]:
        grouped: dict[str, list[tuple[str, int]]] = defaultdict(list)
        for (cve, eco), day in self.events.items():
            grouped[cve].append((eco, day))
        return grouped


@dataclass
class BuildStats:
    duplicate_events_collapsed: int = 0
    events_out_of_window: int = 0


def build_event_log(events: Iterable[Event], window: Window) -> tuple[EventLog, BuildStats]:
    """Keep the earliest in-window day for each (cve, ecosystem) pair."""
    kept: dict[tuple[str, str], int] = {}
    stats = BuildStats()
    for cve, eco, day in events:
        if day not in window:
            stats.events_out_of_window += 1
            continue
        key = (cve, eco)
        prev = kept.get(key)
        if prev is None:
            kept[key] = day
        else:
            stats.duplicate_events_collapsed += 1
            if day < prev:
                kept[key] = day
    return EventLog(window, kept), stats


def merge_logs(a: EventLog, b: EventLog) -> EventLog:
    """Min-merge two logs built over the same window."""
    if a.window != b.window:
        raise ValueError("cannot merge logs with different windows")
    merged = dict(a.events)
    for key, day in b.events.items():
        prev = merged.get(key)
        if prev is None or day < prev:
            merged[key] = day
    return EventLog(a.window, merged)


def _make_trace(cve: str, steps: Iterable[tuple[str, int]]) -> Trace:
    return Trace(cve, tuple(sorted(steps, key=lambda s: (s[1], s[0]))))


def trace_of(log: EventLog, cve: str) -> Trace:
    # Same-day steps are ordered by ecosystem name so keys are deterministic.
    steps = log._by_cve.get(cve)
    if not steps:
        raise UnknownCVEError(cve)
    return _make_trace(cve, steps)


def all_traces(log: EventLog) -> dict[str, Trace]:
    return {cve: _make_trace(cve, steps) for cve, steps in sorted(log._by_cve.items())}


def inter_event_times(trace: Trace) -> list[int]:
    days = [day for _, day in trace.steps]
    return [b - a for a, b in zip(days, days[1:])]


def events_csv_text(log: EventLog) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVENTS_CSV_HEADER)
    writer.writerows(log.entries())
    return buf.getvalue()


def write_events_csv(log: EventLog, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(events_csv_text(log), encoding="utf-8", newline="")
    return path


def read_events_csv(path: str | Path) -> list[Event]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != EVENTS_CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        return [Event(cve, eco, int(day)) for cve, eco, day in reader]


def traces_from_mapping(mapping: Mapping[str, Iterable[tuple[str, int]]]) -> dict[str, Trace]:
    """Build traces directly from ``{cve: [(ecosystem, day), ...]}``."""
    return {cve: _make_trace(cve, steps) for cve, steps in sorted(mapping.items())}
