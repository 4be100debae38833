"""Append-only JSON-lines event log with monotonically increasing sequence numbers.

One event object per line. The log is the authority for label state:
replaying it from empty reproduces a store exactly.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator


class EventLogError(RuntimeError):
    """Raised on malformed or out-of-order log content."""


def canonical_json(obj: Any) -> str:
    """Deterministic JSON: sorted keys, compact separators, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class Event:
    seq: int
    ts: float
    type: str
    data: dict

    def to_json(self) -> str:
        return canonical_json({"seq": self.seq, "ts": self.ts, "type": self.type, "data": self.data})

    @classmethod
    def from_json(cls, line: str) -> Event:
        raw = json.loads(line)
        try:
            return cls(seq=raw["seq"], ts=raw["ts"], type=raw["type"], data=raw["data"])
        except KeyError as exc:
            raise EventLogError(f"event missing field {exc}: {line!r}") from exc


class EventLog:
    """Writer/reader for the event journal.

    Appends are serialized by a lock and buffered until :meth:`commit`,
    so a failed pipeline stage can :meth:`rollback` to the last commit
    point and leave no partial history on disk.
    """

    def __init__(self, path: Path | str | None = None, start_seq: int = 1):
        if start_seq < 1:
            raise EventLogError(f"start_seq must be >= 1, got {start_seq}")
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._committed: list[Event] = []
        self._pending: list[Event] = []
        self._next_seq = start_seq

    @property
    def next_seq(self) -> int:
        return self._next_seq

    def append(self, type: str, data: dict, ts: float) -> Event:
        with self._lock:
            event = Event(seq=self._next_seq, ts=ts, type=type, data=data)
            self._next_seq += 1
            self._pending.append(event)
            return event

    def commit(self) -> None:
        """Flush pending events to disk (if backed by a file)."""
        with self._lock:
            if self._pending and self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    for event in self._pending:
                        fh.write(event.to_json() + "\n")
            self._committed.extend(self._pending)
            self._pending = []

    def rollback(self) -> int:
        """Drop events appended since the last commit; returns how many."""
        with self._lock:
            dropped = len(self._pending)
            self._pending = []
            self._next_seq -= dropped
            return dropped

    def events(self) -> list[Event]:
        with self._lock:
            return list(self._committed) + list(self._pending)


def read_events(path: Path | str) -> Iterator[Event]:
    """Read a journal file, enforcing contiguous sequence numbers from 1."""
    expected = 1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            event = Event.from_json(line)
            if event.seq != expected:
                raise EventLogError(
                    f"line {lineno}: expected seq {expected}, got {event.seq}"
                )
            expected += 1
            yield event
