"""Parsing of OSV JSON records into CVE/ecosystem/day events.

Only the identifier, timestamp, withdrawal, ecosystem and severity fields of
the OSV schema are read. Everything else in a record is ignored.
"""
from __future__ import annotations

import datetime as dt
import enum
import json
import os
import re
import zipfile
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import RecordError, RecordParseError
from .event_log import Event

CVE_RE = re.compile(r"^CVE-\d{4}-\d{4,}$", re.IGNORECASE)
MALWARE_PREFIX = "MAL-"

# OSV's "GIT" ecosystem and GitHub Actions are both reported as GitHub.
_GITHUB_ALIASES = {"github actions", "git", "github"}

_TS_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})"
    r"(?:[Tt ](\d{2}):(\d{2})(?::(\d{2})(?:\.\d+)?)?)?"
    r"\s*(Z|z|[+-]\d{2}(?::?\d{2})?)?$"
)
_EPOCH = dt.date(1970, 1, 1)


class SkipReason(str, enum.Enum):
    MALWARE = "malware"
    WITHDRAWN = "withdrawn"
    NO_CVE = "no_cve"
    NO_ECOSYSTEM = "no_ecosystem"
    NO_TIMESTAMP = "no_timestamp"


@dataclass(frozen=True)
class Skipped:
    """Marker returned by :func:`parse_record` for excluded records."""

    record_id: str
    reason: SkipReason


@dataclass(frozen=True)
class VulnRecord:
    record_id: str
    cve_refs: frozenset[str] = frozenset()
    ecosystems: frozenset[str] = frozenset()
    published_day: int | None = None
    modified_day: int | None = None
    severity_vectors: tuple[str, ...] = ()
    is_withdrawn: bool = False
    is_malware: bool = False

    @property
    def day(self) -> int | None:
        return self.published_day if self.published_day is not None else self.modified_day


@dataclass
class IngestStats:
    records_seen: int = 0
    records_skipped_malware: int = 0
    records_skipped_withdrawn: int = 0
    records_skipped_no_cve: int = 0
    records_skipped_no_ecosystem: int = 0
    records_skipped_no_timestamp: int = 0
    events_emitted: int = 0
    duplicate_events_collapsed: int = 0
    events_out_of_window: int = 0

    def merge(self, other: IngestStats) -> IngestStats:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def count_skip(self, reason: SkipReason) -> None:
        name = f"records_skipped_{reason.value}"
        setattr(self, name, getattr(self, name) + 1)

    @property
    def records_contributing(self) -> int:
        return self.records_seen - sum(
            getattr(self, f"records_skipped_{r.value}") for r in SkipReason
        )

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def to_day(date: dt.date) -> int:
    return (date - _EPOCH).days


def from_day(day: int) -> dt.date:
    return _EPOCH + dt.timedelta(days=day)


def parse_timestamp(value: str) -> int:
    """Convert an RFC 3339 timestamp to its UTC day number."""
    m = _TS_RE.match(value.strip())
    if m is None:
        raise ValueError(f"not an RFC 3339 timestamp: {value!r}")
    year, month, day, hh, mm, ss, tz = m.groups()
    days = to_day(dt.date(int(year), int(month), int(day)))
    seconds = int(hh or 0) * 3600 + int(mm or 0) * 60 + int(ss or 0)
    if tz and tz not in ("Z", "z"):
        sign = -1 if tz[0] == "-" else 1
        digits = tz[1:].replace(":", "")
        offset = int(digits[:2]) * 3600 + int(digits[2:4] or 0) * 60
        seconds -= sign * offset
    return days + seconds // 86400


def extract_cves(
    record_id: str,
    aliases: Iterable[str] = (),
    upstream: Iterable[str] = (),
    related: Iterable[str] = (),
) -> set[str]:
    out = set()
    for ident in (record_id, *aliases, *upstream, *related):
        if isinstance(ident, str):
            ident = ident.strip()
            if CVE_RE.match(ident):
                out.add(ident.upper())
    return out


def normalize_ecosystem(raw_name: str) -> str:
    """Map an OSV ecosystem string to its coarse canonical name.

    Release suffixes are dropped (``"Debian:11"`` becomes ``"Debian"``) and
    Git / GitHub Actions collapse to ``"GitHub"``.
    """
    if not isinstance(raw_name, str) or not raw_name.strip():
        raise RecordError(f"invalid ecosystem name {raw_name!r}")
    name = raw_name.split(":", 1)[0].strip()
    if not name:
        raise RecordError(f"invalid ecosystem name {raw_name!r}")
    if name.lower() in _GITHUB_ALIASES:
        return "GitHub"
    return name


def _str_list(doc: dict[str, Any], key: str, source: str | None) -> list[str]:
    value = doc.get(key)
    if value is None:
        return []
    if not isinstance(value, list):
        raise RecordError(f"field {key!r} must be a list", source)
    return [v for v in value if isinstance(v, str)]


def _timestamp(doc: dict[str, Any], key: str, source: str | None) -> int | None:
    value = doc.get(key)
    if value is None or value == "":
        return None
    if not isinstance(value, str):
        raise RecordError(f"field {key!r} must be a string", source)
    try:
        return parse_timestamp(value)
    except ValueError as exc:
        raise RecordError(str(exc), source) from None


def load_json(raw_json: str | bytes, source: str | None = None) -> Any:
    if isinstance(raw_json, (bytes, bytearray)):
        try:
            raw_json = bytes(raw_json).decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise RecordParseError(exc.reason, exc.start, source) from None
    try:
        return json.loads(raw_json)
    except json.JSONDecodeError as exc:
        offset = len(raw_json[: exc.pos].encode("utf-8"))
        raise RecordParseError(exc.msg, offset, source) from None


def record_from_dict(
    doc: Any, *, include_related: bool = True, source: str | None = None
) -> VulnRecord | Skipped:
    if not isinstance(doc, dict):
        raise RecordError("record is not a JSON object", source)
    record_id = doc.get("id")
    if not isinstance(record_id, str) or not record_id:
        raise RecordError("record has no 'id'", source)

    if record_id.upper().startswith(MALWARE_PREFIX):
        return Skipped(record_id, SkipReason.MALWARE)
    if doc.get("withdrawn"):
        return Skipped(record_id, SkipReason.WITHDRAWN)

    cves = extract_cves(
        record_id,
        _str_list(doc, "aliases", source),
        _str_list(doc, "upstream", source),
        _str_list(doc, "related", source) if include_related else (),
    )

    ecosystems = set()
    affected = doc.get("affected") or []
    if not isinstance(affected, list):
        raise RecordError("field 'affected' must be a list", source)
    for entry in affected:
        package = entry.get("package") if isinstance(entry, dict) else None
        eco = package.get("ecosystem") if isinstance(package, dict) else None
        if eco:
            ecosystems.add(normalize_ecosystem(eco))

    vectors = []
    for sev in doc.get("severity") or []:
        if isinstance(sev, dict) and isinstance(sev.get("score"), str):
            vectors.append(sev["score"])

    return VulnRecord(
        record_id=record_id,
        cve_refs=frozenset(cves),
        ecosystems=frozenset(ecosystems),
        published_day=_timestamp(doc, "published", source),
        modified_day=_timestamp(doc, "modified", source),
        severity_vectors=tuple(vectors),
    )


def parse_record(
    raw_json: str | bytes, *, include_related: bool = True, source: str | None = None
) -> VulnRecord | Skipped:
    """Parse one OSV JSON document.

    Malware (``MAL-`` ids) and withdrawn records come back as :class:`Skipped`.
    """
    return record_from_dict(
        load_json(raw_json, source), include_related=include_related, source=source
    )


def skip_reason(record: VulnRecord | Skipped) -> SkipReason | None:
    """First applicable exclusion, checked in IngestStats priority order."""
    if isinstance(record, Skipped):
        return record.reason
    if not record.cve_refs:
        return SkipReason.NO_CVE
    if not record.ecosystems:
        return SkipReason.NO_ECOSYSTEM
    if record.day is None:
        return SkipReason.NO_TIMESTAMP
    return None


def record_to_events(record: VulnRecord) -> list[Event]:
    day = record.day
    if day is None:
        return []
    return [
        Event(cve, eco, day)
        for cve in sorted(record.cve_refs)
        for eco in sorted(record.ecosystems)
    ]


# ---------------------------------------------------------------------------
# Corpus enumeration

@dataclass
class IngestResult:
    events: list[Event] = field(default_factory=list)
    records: list[VulnRecord] = field(default_factory=list)
    stats: IngestStats = field(default_factory=IngestStats)
    errors: list[str] = field(default_factory=list)

    def merge(self, other: IngestResult) -> IngestResult:
        self.events.extend(other.events)
        self.records.extend(other.records)
        self.stats.merge(other.stats)
        self.errors.extend(other.errors)
        return self


def discover_sources(paths: Iterable[str | os.PathLike]) -> list[Path]:
    """Expand input paths into a sorted list of JSON files and zip archives."""
    found = set()
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise FileNotFoundError(f"input path does not exist: {p}")
        if p.is_dir():
            for root, _dirs, files in os.walk(p):
                for name in files:
                    if name.endswith((".json", ".zip")):
                        found.add(Path(root, name))
        else:
            found.add(p)
    return sorted(found)


def _ingest_document(
    data: bytes, label: str, include_related: bool, out: IngestResult
) -> None:
    try:
        rec = parse_record(data, include_related=include_related, source=label)
    except RecordError as exc:
        out.errors.append(str(exc))
        return
    out.stats.records_seen += 1
    reason = skip_reason(rec)
    if reason is not None:
        out.stats.count_skip(reason)
        return
    events = record_to_events(rec)
    out.stats.events_emitted += len(events)
    out.events.extend(events)
    out.records.append(rec)


def ingest_file(path: Path, include_related: bool = True) -> IngestResult:
    out = IngestResult()
    try:
        if path.suffix == ".zip":
            with zipfile.ZipFile(path) as zf:
                for name in sorted(zf.namelist()):
                    if name.endswith(".json"):
                        _ingest_document(zf.read(name), f"{path}!{name}", include_related, out)
        else:
            _ingest_document(path.read_bytes(), str(path), include_related, out)
    except (OSError, zipfile.BadZipFile) as exc:
        out.errors.append(f"{path}: {exc}")
    return out


def ingest_paths(
    paths: Iterable[str | os.PathLike],
    *,
    include_related: bool = True,
    workers: int | None = None,
) -> IngestResult:
    """Parse every record under ``paths``.

    Files fan out over a thread pool; per-file results are merged in sorted
    path order so the outcome never depends on scheduling.
    """
    sources = discover_sources(paths)
    workers = workers or min(8, (os.cpu_count() or 1) + 2)
    total = IngestResult()
    if workers <= 1 or len(sources) <= 1:
        for src in sources:
            total.merge(ingest_file(src, include_related))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(lambda s: ingest_file(s, include_related), sources):
                total.merge(res)
    total.records.sort(key=lambda r: r.record_id)
    return total
