"""Append-only audit trail, one JSON record per line."""
from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass

from gridbox.catalog.changes import check_no_leak

ACTIONS = ("STORE", "QUERY", "RETRIEVE_REQUEST", "RESOLVE", "UPDATE_META", "STORE_SR", "ADD_EVENT", "SYNC")
MUTATING = frozenset({"STORE", "UPDATE_META", "STORE_SR", "ADD_EVENT"})


@dataclass(frozen=True)
class AuditEntry:
    wall_time: float
    actor: str
    action: str
    refs: tuple
    outcome: str

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown audit action {self.action!r}")
        object.__setattr__(self, "refs", tuple(self.refs))


class AuditLog:
    def __init__(self, path=None):
        self.path = path
        self.entries: list[AuditEntry] = []
        self._lock = threading.Lock()
        if path is not None:
            try:
                with open(path) as fh:
                    for line in fh:
                        if line.strip():
                            data = json.loads(line)
                            self.entries.append(AuditEntry(**data))
            except FileNotFoundError:
                pass

    def record(self, entry: AuditEntry, forbidden_values=()) -> AuditEntry:
        check_no_leak(asdict(entry), forbidden_values)
        line = json.dumps(asdict(entry), sort_keys=True, separators=(",", ":"))
        with self._lock:
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(line + "\n")
            self.entries.append(entry)
        return entry

    def text(self) -> str:
        with self._lock:
            return "".join(
                json.dumps(asdict(e), sort_keys=True, separators=(",", ":")) + "\n" for e in self.entries
            )

    def count(self, action: str | None = None, outcome: str | None = None) -> int:
        with self._lock:
            return sum(
                1 for e in self.entries
                if (action is None or e.action == action) and (outcome is None or e.outcome == outcome)
            )
