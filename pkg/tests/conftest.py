from __future__ import annotations

import datetime as dt
from contextlib import contextmanager
from pathlib import Path

import pytest

from osvprop.ingest import to_day
from osvprop.pipeline import PipelineConfig

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"
GOLDEN = FIXTURES / "golden"
CUTOFF_DAY = to_day(dt.date(2025, 4, 19))

# criterion label -> list of booleans, filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, list[bool]] = {}


@contextmanager
def criterion(label: str):
    """Record pass/fail of the enclosed assertions under ``label``."""
    try:
        yield
    except BaseException:
        ACCEPTANCE.setdefault(label, []).append(False)
        raise
    ACCEPTANCE.setdefault(label, []).append(True)


@pytest.fixture
def corpus_dir() -> Path:
    return CORPUS


@pytest.fixture
def fixture_config(tmp_path: Path):
    def make(out: Path | None = None, **overrides) -> PipelineConfig:
        kwargs = dict(
            input_paths=[str(CORPUS)],
            cutoff_day=CUTOFF_DAY,
            output_dir=str(out or tmp_path / "out"),
        )
        kwargs.update(overrides)
        return PipelineConfig(**kwargs)

    return make


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda s: (len(s.split()[0]), s)):
        ok = all(ACCEPTANCE[label])
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}")
