"""Durable append-only per-channel persistence.

One NDJSON file per channel: each line is exactly the JSON object a feeds
query would return for that entry, so logs are greppable and diffable and
a recorded file replays byte-identically. Appends flush and fsync before
returning; recovery truncates a torn final line (a write the caller was
never acked for) but refuses to open a file corrupted anywhere else.

The ingest service serializes writers per channel; queries only touch an
in-memory snapshot, so readers never observe a partial line.
"""

from __future__ import annotations

import json
import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Optional

from .wire import FeedEntry, WireError

log = logging.getLogger(__name__)


class StoreCorruptionError(RuntimeError):
    """Mid-file damage; refusing to open rather than serve a broken log."""


def channel_log_path(data_dir: str | Path, channel_id: int) -> Path:
    return Path(data_dir) / f"channel_{channel_id}.ndjson"


def _encode_line(entry: FeedEntry) -> bytes:
    return (json.dumps(entry.to_json_dict(), separators=(",", ":")) + "\n").encode("utf-8")


class ChannelLog:
    """Append-only log of one channel's feed entries."""

    def __init__(self, channel_id: int, path: Path, entries: list[FeedEntry], offsets: list[int]):
        self.channel_id = channel_id
        self.path = path
        self._entries = entries
        self._offsets = offsets  # entry_id i lives at byte offset _offsets[i-1]
        self._fh = open(path, "ab")

    @property
    def next_entry_id(self) -> int:
        return len(self._entries) + 1

    @classmethod
    def open(cls, path: str | Path, channel_id: int) -> "ChannelLog":
        """Open or create a channel log, recovering from a torn tail.

        A final line without its newline is the remnant of an append that
        was never acknowledged; it is truncated away and logged. Any
        malformed complete line or entry_id gap is fatal.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if not path.exists():
            path.touch()
        raw = path.read_bytes()

        keep = len(raw)
        if raw and not raw.endswith(b"\n"):
            keep = raw.rfind(b"\n") + 1  # 0 when there is no complete line at all
            log.warning(
                "channel %d: truncating torn final line in %s (%d bytes dropped)",
                channel_id, path, len(raw) - keep,
            )
            with open(path, "r+b") as fh:
                fh.truncate(keep)

        entries: list[FeedEntry] = []
        offsets: list[int] = []
        offset = 0
        for lineno, line in enumerate(raw[:keep].splitlines(keepends=True), start=1):
            try:
                doc = json.loads(line)
                if not isinstance(doc, dict):
                    raise WireError("record is not an object")
                entry = FeedEntry.from_json_dict(doc)
            except (json.JSONDecodeError, WireError) as exc:
                raise StoreCorruptionError(f"{path}: malformed record at line {lineno}: {exc}") from exc
            if entry.entry_id != lineno:
                raise StoreCorruptionError(
                    f"{path}: entry_id {entry.entry_id} at line {lineno}; ids must run 1,2,3,..."
                )
            entries.append(entry)
            offsets.append(offset)
            offset += len(line)
        return cls(channel_id, path, entries, offsets)

    def append(self, entry: FeedEntry) -> int:
        """Write one entry; durable before returning."""
        if entry.entry_id != self.next_entry_id:
            raise ValueError(f"expected entry_id {self.next_entry_id}, got {entry.entry_id}")
        line = _encode_line(entry)
        offset = self._fh.tell()
        self._fh.write(line)
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._entries.append(entry)
        self._offsets.append(offset)
        return entry.entry_id

    def query(
        self,
        last_n: int,
        start: Optional[datetime] = None,
        end: Optional[datetime] = None,
    ) -> list[FeedEntry]:
        """Last N entries inside the inclusive [start, end] window, ascending."""
        if last_n < 0:
            raise ValueError(f"last_n must be >= 0, got {last_n}")
        entries = self._entries[:]  # snapshot; appends never mutate existing items
        if start is not None:
            entries = [e for e in entries if e.created_at >= start]
        if end is not None:
            entries = [e for e in entries if e.created_at <= end]
        return entries[-last_n:] if last_n else []

    def count(self) -> int:
        return len(self._entries)

    def last_entry(self) -> Optional[FeedEntry]:
        return self._entries[-1] if self._entries else None

    def close(self) -> None:
        self._fh.close()
