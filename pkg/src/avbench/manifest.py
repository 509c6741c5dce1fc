"""Line-delimited JSON manifests, hashing and run metadata.

Every pipeline stage reads and writes manifests in this format: UTF-8, one
JSON object per line, with an optional leading header line carrying run
metadata under the reserved key "_meta". Record serialization is canonical
(sorted keys) so identical inputs reproduce byte-identical files.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

log = logging.getLogger(__name__)

META_KEY = "_meta"


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def read_jsonl(path, skip_malformed: bool = False) -> Iterator[dict]:
    """Yield records from a manifest, skipping the meta header if present.

    skip_malformed trades strictness for robustness: unparseable lines are
    dropped instead of aborting the stream (callers log the skip).
    """
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                if skip_malformed:
                    log.warning("skipping malformed manifest line in %s: %s", path, exc)
                    continue
                raise
            if META_KEY in record:
                continue
            yield record


def read_meta(path) -> Optional[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            return record.get(META_KEY)
    return None


def write_jsonl(path, records: Iterable[dict], meta: Optional[dict] = None) -> int:
    """Write records (plus optional meta header) and return the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(dumps_record({META_KEY: meta}) + "\n")
        for record in records:
            fh.write(dumps_record(record) + "\n")
            count += 1
    return count


def bytes_sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def content_hash(*paths) -> str:
    """Digest over raw media bytes, concatenated in argument order.

    Derived data (captions, attributes) is deliberately excluded.
    """
    h = hashlib.sha256()
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        if p.is_file():
            with open(p, "rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    h.update(chunk)
        else:
            # Opaque refs (URLs, container ids) hash as their textual value.
            h.update(str(p).encode("utf-8"))
    return h.hexdigest()


def config_hash(obj: Any) -> str:
    return bytes_sha256(json.dumps(obj, sort_keys=True, default=str).encode("utf-8"))


def run_meta(seed: int, cfg_hash: str) -> dict:
    from avbench import __version__

    return {"tool_version": __version__, "config_hash": cfg_hash, "seed": seed}
