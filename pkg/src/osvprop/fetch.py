"""Download per-ecosystem OSV dumps and record their provenance."""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import urllib.error
import urllib.parse
import urllib.request
from collections.abc import Iterable
from pathlib import Path
from typing import Any

log = logging.getLogger(__name__)

OSV_BUCKET_URL = "https://osv-vulnerabilities.storage.googleapis.com"
MANIFEST_FILE = "manifest.json"
_CHUNK = 1 << 16


def dump_url(ecosystem: str, base_url: str = OSV_BUCKET_URL) -> str:
    return f"{base_url.rstrip('/')}/{urllib.parse.quote(ecosystem)}/all.zip"


def _download(url: str, target: Path, timeout: float) -> tuple[int, str]:
    # urllib honours http_proxy / https_proxy from the environment.
    digest = hashlib.sha256()
    size = 0
    tmp = target.with_suffix(".part")
    with urllib.request.urlopen(url, timeout=timeout) as resp, open(tmp, "wb") as fh:
        while chunk := resp.read(_CHUNK):
            fh.write(chunk)
            digest.update(chunk)
            size += len(chunk)
    tmp.replace(target)
    return size, digest.hexdigest()


def fetch_dumps(
    ecosystems: Iterable[str],
    dest: str | Path,
    *,
    base_url: str = OSV_BUCKET_URL,
    timeout: float = 300.0,
) -> list[dict[str, Any]]:
    """Download ``<ecosystem>/all.zip`` for each ecosystem into ``dest``.

    Archives are stored unopened as ``dest/<ecosystem>/all.zip``. One manifest
    entry is produced per ecosystem, failures included, and the manifest is
    written to ``dest/manifest.json``.
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    entries = []
    for eco in ecosystems:
        url = dump_url(eco, base_url)
        entry: dict[str, Any] = {
            "ecosystem": eco,
            "url": url,
            "retrieved_at": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        }
        if not eco or "/" in eco or eco in (".", ".."):
            entry.update(ok=False, error="invalid ecosystem name")
            entries.append(entry)
            continue
        target_dir = dest / eco
        target_dir.mkdir(exist_ok=True)
        target = target_dir / "all.zip"
        try:
            size, sha = _download(url, target, timeout)
        except urllib.error.HTTPError as exc:
            log.warning("fetch %s failed: HTTP %s", eco, exc.code)
            entry.update(ok=False, status=exc.code, error=str(exc.reason))
        except (urllib.error.URLError, OSError) as exc:
            log.warning("fetch %s failed: %s", eco, exc)
            entry.update(ok=False, error=str(exc))
        else:
            log.info("fetched %s: %d bytes", eco, size)
            entry.update(
                ok=True, status=200, bytes=size, sha256=sha,
                path=str(target.relative_to(dest)),
            )
        entries.append(entry)
    (dest / MANIFEST_FILE).write_text(
        json.dumps(entries, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return entries
