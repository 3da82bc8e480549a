"""Replication log entries and the on-disk change-log format.

Log file layout: a sequence of records, each a 4-byte big-endian length
followed by that many bytes of canonical JSON (sorted keys, no spaces).
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

from gridbox.errors import VaultLeak
from gridbox.mom.records import IDENTITY_FIELDS

KINDS = ("REGISTER_LFN", "UPSERT_ROW", "UPDATE_PATIENT_META", "ADD_ASSESSMENT", "ADD_EVENT")


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


@dataclass(frozen=True)
class CatalogChange:
    origin: str
    seq: int
    vo: str
    kind: str
    payload: dict
    wall_time: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown change kind {self.kind!r}")
        if self.seq < 1:
            raise ValueError("sequence numbers start at 1")

    @property
    def id(self) -> tuple[str, int]:
        return (self.origin, self.seq)

    @property
    def stamp(self) -> tuple:
        return (self.wall_time, self.origin, self.seq)

    def to_json(self) -> dict:
        return {
            "origin": self.origin,
            "seq": self.seq,
            "vo": self.vo,
            "kind": self.kind,
            "payload": self.payload,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CatalogChange":
        return cls(
            origin=str(data["origin"]),
            seq=int(data["seq"]),
            vo=str(data["vo"]),
            kind=str(data["kind"]),
            payload=data["payload"],
            wall_time=float(data["wall_time"]),
        )

    def encode(self) -> bytes:
        return canonical_json(self.to_json())


def find_identity_fields(payload) -> list[str]:
    """Identity-vault keys anywhere inside ``payload``."""
    found = []
    stack = [payload]
    while stack:
        item = stack.pop()
        if isinstance(item, dict):
            for key, value in item.items():
                if key in IDENTITY_FIELDS:
                    found.append(key)
                stack.append(value)
        elif isinstance(item, (list, tuple)):
            stack.extend(item)
    return found


def check_no_leak(payload, forbidden_values=()) -> None:
    keys = find_identity_fields(payload)
    if keys:
        raise VaultLeak(f"payload carries identity fields {sorted(set(keys))}")
    if forbidden_values:
        text = canonical_json(payload).decode()
        for value in forbidden_values:
            if value and value in text:
                raise VaultLeak("payload contains a raw patient identifier")


class ChangeLog:
    """Append-only length-prefixed record file."""

    def __init__(self, path, fsync: bool = False):
        self.path = path
        self.fsync = fsync

    def append(self, changes) -> None:
        buf = bytearray()
        for change in changes:
            body = change.encode()
            buf += struct.pack(">I", len(body)) + body
        with open(self.path, "ab") as fh:
            fh.write(buf)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())

    def read(self) -> list[CatalogChange]:
        if not os.path.exists(self.path):
            return []
        with open(self.path, "rb") as fh:
            data = fh.read()
        out, pos = [], 0
        while pos + 4 <= len(data):
            (n,) = struct.unpack_from(">I", data, pos)
            if pos + 4 + n > len(data):
                break  # torn tail from an interrupted write
            out.append(CatalogChange.from_json(json.loads(data[pos + 4 : pos + 4 + n])))
            pos += 4 + n
        return out
