"""Append-only JSONL journal with write-ahead semantics.

One JSON object per line; a record is committed once its newline hits the
file. `append` flushes and fsyncs before returning, so a crash can lose at
most the record being written — and that loss shows up as a torn final line,
which `records()` silently drops. A malformed line anywhere *before* the tail
is real corruption and raises.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path


class StoreError(Exception):
    """Journal file is unreadable or corrupt."""


class JournalStore:
    """Durable append-only record log backing the chat engine."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: dict) -> None:
        """Commit one record; returns only after it is on disk."""
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def records(self) -> list[dict]:
        """All committed records, oldest first.

        Tolerates a torn final line (an interrupted append); any earlier
        undecodable line raises StoreError.
        """
        with self._lock:
            self._fh.flush()
            raw = self.path.read_bytes()
        lines = raw.split(b"\n")
        # Anything after the final newline is a torn tail from an
        # interrupted append: that record never committed, so drop it.
        lines.pop()
        out = []
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise StoreError(f"corrupt journal line {i + 1} in {self.path}") from exc
            if not isinstance(rec, dict):
                raise StoreError(f"journal line {i + 1} is not an object in {self.path}")
            out.append(rec)
        return out

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
