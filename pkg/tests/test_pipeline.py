from __future__ import annotations

import hashlib
import http.server
import json
import threading
from pathlib import Path

import pytest

from osvprop import __version__
from osvprop.cli import EXIT_EMPTY_CORPUS, EXIT_FAILURE, EXIT_OK, main
from osvprop.errors import EmptyCorpusError
from osvprop.fetch import dump_url, fetch_dumps
from osvprop.pipeline import (
    BOXPLOT_HEADER,
    DELAYS_HEADER,
    SEQUENCES_HEADER,
    TESTS_HEADER,
    IngestFailure,
    PipelineConfig,
    emit_plot_data,
    run_pipeline,
    snapshot_checks,
)

from conftest import CORPUS, CUTOFF_DAY


def _header(path: Path) -> tuple[str, ...]:
    return tuple(path.read_text(encoding="utf-8").splitlines()[0].split(","))


def test_report_invariants(fixture_config):
    report = run_pipeline(fixture_config())
    assert report.n_cves == sum(r.count for r in report.ranking.rows)
    assert report.lengths.n_multi == len(report.delay_records)
    assert all(r.m > 1 and r.delay_days >= 0 for r in report.delay_records)
    out = Path(report.config.output_dir)
    for name in report.files:
        assert (out / name).is_file()
    payload = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert payload["tool"]["version"] == __version__
    assert payload["corpus"]["n_cves"] == 17
    assert payload["ingest"]["records_seen"] == 39


def test_plot_data_headers(fixture_config, tmp_path):
    report = run_pipeline(fixture_config(), write=False)
    files = emit_plot_data(report, tmp_path / "plots")
    names = sorted(p.name for p in files)
    assert names == ["delay_boxplot.csv", "delays.csv", "h1.json", "sequences.csv", "tests.csv"]
    d = tmp_path / "plots"
    assert _header(d / "sequences.csv") == SEQUENCES_HEADER
    assert _header(d / "delays.csv") == DELAYS_HEADER
    assert _header(d / "delay_boxplot.csv") == BOXPLOT_HEADER
    assert _header(d / "tests.csv") == TESTS_HEADER
    assert set(json.loads((d / "h1.json").read_text())) == {"r", "n", "verdict"}
    first = {p.name: p.read_bytes() for p in files}
    emit_plot_data(report, d)
    assert {p.name: p.read_bytes() for p in files} == first


def test_sequences_csv_is_top_k(fixture_config):
    report = run_pipeline(fixture_config(top_k=3))
    rows = (Path(report.config.output_dir) / "sequences.csv").read_text().splitlines()
    assert rows[1:] == ["1,Debian>Ubuntu,3,0.17647058823529413",
                        "2,npm>GitHub,2,0.11764705882352941",
                        "3,Alpine>Debian>SUSE,1,0.058823529411764705"]


def _write_record(path: Path, **doc) -> None:
    path.write_text(json.dumps(doc), encoding="utf-8")


def test_singletons_only_gives_header_only_delay_files(tmp_path):
    corpus = tmp_path / "c"
    corpus.mkdir()
    for i, eco in enumerate(["npm", "PyPI", "Go"]):
        _write_record(corpus / f"{i}.json", id=f"CVE-2020-000{i}",
                      affected=[{"package": {"ecosystem": eco}}], published="2020-05-01T00:00:00Z")
    cfg = PipelineConfig([str(corpus)], CUTOFF_DAY, str(tmp_path / "out"))
    report = run_pipeline(cfg)
    out = tmp_path / "out"
    assert (out / "delays.csv").read_text() == ",".join(DELAYS_HEADER) + "\n"
    assert (out / "delay_boxplot.csv").read_text() == ",".join(BOXPLOT_HEADER) + "\n"
    assert report.delay_summary.is_empty and report.h1.verdict == "not testable"


def test_related_switch_changes_corpus(fixture_config):
    with_related = run_pipeline(fixture_config(), write=False)
    without = run_pipeline(fixture_config(related_generates_events=False), write=False)
    assert "CVE-2023-3003" in with_related.traces
    assert "CVE-2023-3003" not in without.traces


def test_empty_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    cfg = PipelineConfig([str(tmp_path / "empty")], CUTOFF_DAY, str(tmp_path / "out"))
    with pytest.raises(EmptyCorpusError):
        run_pipeline(cfg)


def test_bad_file_fails_run(tmp_path):
    shutil_corpus = tmp_path / "c"
    shutil_corpus.mkdir()
    (shutil_corpus / "broken.json").write_text("{", encoding="utf-8")
    cfg = PipelineConfig([str(shutil_corpus)], CUTOFF_DAY, str(tmp_path / "out"))
    with pytest.raises(IngestFailure) as err:
        run_pipeline(cfg)
    assert "broken.json" in err.value.errors[0]


@pytest.mark.parametrize("kwargs", [
    dict(window_start_day=CUTOFF_DAY),
    dict(top_k=0),
    dict(alpha=1.5),
])
def test_config_validation(kwargs, tmp_path):
    with pytest.raises(ValueError):
        PipelineConfig([str(CORPUS)], CUTOFF_DAY, str(tmp_path), **kwargs)


def test_snapshot_checks_warn_on_fixture(fixture_config):
    warnings = snapshot_checks(run_pipeline(fixture_config(), write=False))
    assert any("order of magnitude" in w for w in warnings)


class TestCLI:
    def test_analyze(self, tmp_path, capsys):
        code = main(["analyze", "--input", str(CORPUS), "--cutoff", "2025-04-19",
                     "--out", str(tmp_path / "o"), "--top-k", "5"])
        assert code == EXIT_OK
        assert "17 CVEs" in capsys.readouterr().out
        rows = (tmp_path / "o" / "sequences.csv").read_text().splitlines()
        assert len(rows) == 6

    def test_empty_corpus_exit_code(self, tmp_path):
        (tmp_path / "e").mkdir()
        code = main(["analyze", "--input", str(tmp_path / "e"), "--cutoff", "2025-04-19",
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_EMPTY_CORPUS

    def test_missing_input_exit_code(self, tmp_path):
        code = main(["analyze", "--input", str(tmp_path / "nope"), "--cutoff", "2025-04-19",
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_FAILURE

    def test_cutoff_required(self, tmp_path):
        assert main(["analyze", "--input", str(CORPUS), "--out", str(tmp_path)]) == EXIT_FAILURE

    def test_config_file_with_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "input_paths": [str(CORPUS)], "cutoff": "2025-04-19",
            "output_dir": str(tmp_path / "o"), "top_k": 2, "min_cves_per_ecosystem": 3,
        }))
        assert main(["analyze", "--config", str(cfg), "--top-k", "4", "--no-related-events"]) == EXIT_OK
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["config"]["top_k"] == 4
        assert report["config"]["min_cves_per_ecosystem"] == 3
        assert report["config"]["related_generates_events"] is False

    def test_config_file_unknown_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"cutof": "2025-04-19"}))
        assert main(["analyze", "--config", str(cfg)]) == EXIT_FAILURE

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out


@pytest.fixture
def bucket(tmp_path):
    """Local HTTP server standing in for the OSV dump bucket."""
    root = tmp_path / "bucket"
    (root / "npm").mkdir(parents=True)
    (root / "npm" / "all.zip").write_bytes(b"PK\x05\x06" + b"\x00" * 18)
    (root / "Red Hat").mkdir()
    (root / "Red Hat" / "all.zip").write_bytes(b"zipdata-redhat")

    class Handler(http.server.SimpleHTTPRequestHandler):
        def __init__(self, *args, **kwargs):
            super().__init__(*args, directory=str(root), **kwargs)

        def log_message(self, *args):
            pass

    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield root, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


class TestFetch:
    def test_url(self):
        assert dump_url("npm") == "https://osv-vulnerabilities.storage.googleapis.com/npm/all.zip"
        assert dump_url("Red Hat", "http://x/") == "http://x/Red%20Hat/all.zip"

    def test_download_and_manifest(self, bucket, tmp_path):
        root, url = bucket
        dest = tmp_path / "dl"
        entries = fetch_dumps(["npm", "Red Hat", "NoSuchEco"], dest, base_url=url)
        by_eco = {e["ecosystem"]: e for e in entries}
        data = (root / "npm" / "all.zip").read_bytes()
        assert by_eco["npm"]["ok"] and by_eco["npm"]["bytes"] == len(data)
        assert by_eco["npm"]["sha256"] == hashlib.sha256(data).hexdigest()
        assert (dest / "npm" / "all.zip").read_bytes() == data
        assert by_eco["Red Hat"]["ok"]
        assert not by_eco["NoSuchEco"]["ok"] and by_eco["NoSuchEco"]["status"] == 404
        manifest = json.loads((dest / "manifest.json").read_text())
        assert [e["ecosystem"] for e in manifest] == ["npm", "Red Hat", "NoSuchEco"]

    def test_empty_list(self, tmp_path):
        assert fetch_dumps([], tmp_path / "dl") == []
        assert json.loads((tmp_path / "dl" / "manifest.json").read_text()) == []
        assert main(["fetch", "--out", str(tmp_path / "dl2")]) == EXIT_OK

    def test_all_failed_exit_code(self, bucket, tmp_path):
        _, url = bucket
        code = main(["fetch", "--ecosystem", "Nope", "--out", str(tmp_path / "dl"), "--base-url", url])
        assert code == EXIT_FAILURE
        code = main(["fetch", "--ecosystem", "npm", "Nope", "--out", str(tmp_path / "dl"), "--base-url", url])
        assert code == EXIT_OK

    def test_fetched_zip_is_ingestible(self, tmp_path):
        import zipfile

        archive = tmp_path / "npm" / "all.zip"
        archive.parent.mkdir()
        with zipfile.ZipFile(archive, "w") as zf:
            zf.writestr("GHSA-1.json", json.dumps({
                "id": "GHSA-1", "aliases": ["CVE-2021-0001"], "published": "2021-01-01T00:00:00Z",
                "affected": [{"package": {"ecosystem": "npm", "name": "x"}}]}))
        cfg = PipelineConfig([str(tmp_path)], CUTOFF_DAY, str(tmp_path / "out"))
        assert run_pipeline(cfg).n_cves == 1
