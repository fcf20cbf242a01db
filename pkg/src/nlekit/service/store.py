"""Append-only event log with batch-atomic commits.

Each committed event is one complete JSON line.  A crash mid-write leaves
at most one unterminated trailing line, which recovery discards; a
malformed line anywhere else means real corruption and is an error.
"""

from __future__ import annotations

import json
import logging
import os
import threading

log = logging.getLogger(__name__)


class StoreError(Exception):
    pass


class AppendLog:
    """Durable ndjson log: one fsynced write per event."""

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()
        self._truncate_torn_tail()
        self._fd = os.open(path, os.O_APPEND | os.O_CREAT | os.O_WRONLY,
                           0o644)

    def _truncate_torn_tail(self) -> None:
        """Drop an unterminated final line so new appends stay parseable."""
        try:
            with open(self.path, "rb") as fh:
                raw = fh.read()
        except FileNotFoundError:
            return
        if not raw or raw.endswith(b"\n"):
            return
        keep, sep, torn = raw.rpartition(b"\n")
        log.warning("truncating torn trailing write in %s (%d bytes)",
                    self.path, len(torn))
        with open(self.path, "rb+") as fh:
            fh.truncate(len(keep) + len(sep))

    def append(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True,
                          separators=(",", ":")) + "\n"
        data = line.encode("utf-8")
        with self._lock:
            written = os.write(self._fd, data)
            if written != len(data):
                raise StoreError(
                    f"short write to {self.path}: {written}/{len(data)}")
            os.fsync(self._fd)

    def read_all(self) -> list[dict]:
        """All committed events, oldest first.

        An unterminated final line is treated as a torn write and
        skipped; any other unparsable line raises.
        """
        with self._lock:
            try:
                with open(self.path, "rb") as fh:
                    raw = fh.read()
            except FileNotFoundError:
                return []
        if not raw:
            return []
        complete, _, partial = raw.rpartition(b"\n")
        if partial:
            log.warning("discarding torn trailing write in %s (%d bytes)",
                        self.path, len(partial))
        events = []
        for lineno, line in enumerate(complete.split(b"\n"), start=1):
            if not line.strip():
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StoreError(
                    f"corrupt event at {self.path}:{lineno}: {exc}") from exc
        return events

    def close(self) -> None:
        with self._lock:
            if self._fd >= 0:
                os.close(self._fd)
                self._fd = -1

    def __enter__(self) -> "AppendLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
