"""Content-addressed immutable object vault with an LRU-evicted cache tier.

Layout under the root directory::

    objects/<first two hex digits>/<sha256 hex>   raw Part-10 bytes
    index.json                                    lfn -> entry metadata
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

from gridbox.errors import DigestConflict, DigestMismatch, StorageFull, UnknownLfn


def digest_of(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class StoredObject:
    lfn: str
    sop_uid: str
    path: str
    content_digest: str
    size_bytes: int
    stored_at: float
    pinned: bool = False  # origin copies are never evicted
    interim: bool = False  # merged filesets, not catalogued
    last_access: float = 0.0
    access_seq: int = 0


class Vault:
    def __init__(self, root, clock, capacity: int | None = None, high_water: float = 0.9, low_water: float = 0.7):
        if not 0 < low_water < high_water <= 1:
            raise ValueError("watermarks must satisfy 0 < low < high <= 1")
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self.capacity = capacity
        self.high_water = high_water
        self.low_water = low_water
        self._lock = threading.RLock()
        self._access = 0
        self.entries: dict[str, StoredObject] = {}
        self.evictions: list[str] = []
        index = self.root / "index.json"
        if index.exists():
            for item in json.loads(index.read_text()):
                entry = StoredObject(**item)
                self.entries[entry.lfn] = entry
                self._access = max(self._access, entry.access_seq)

    def _save(self) -> None:
        tmp = self.root / "index.json.tmp"
        data = [asdict(e) for e in sorted(self.entries.values(), key=lambda e: e.lfn)]
        tmp.write_text(json.dumps(data, indent=0, sort_keys=True))
        os.replace(tmp, self.root / "index.json")

    def _path_for(self, digest: str) -> Path:
        return self.root / "objects" / digest[:2] / digest

    def has(self, lfn: str) -> bool:
        with self._lock:
            return lfn in self.entries

    def get(self, lfn: str) -> StoredObject | None:
        with self._lock:
            return self.entries.get(lfn)

    def by_sop(self, sop_uid: str) -> StoredObject | None:
        with self._lock:
            for entry in self.entries.values():
                if entry.sop_uid == sop_uid:
                    return entry
        return None

    @property
    def used_bytes(self) -> int:
        with self._lock:
            return sum({e.content_digest: e.size_bytes for e in self.entries.values()}.values())

    def touch(self, lfn: str) -> None:
        with self._lock:
            entry = self.entries.get(lfn)
            if entry is not None:
                self._access += 1
                entry.last_access = self.clock.now()
                entry.access_seq = self._access
                self._save()

    def put(self, lfn: str, sop_uid: str, data: bytes, *, pinned: bool = False, interim: bool = False) -> StoredObject:
        digest = digest_of(data)
        with self._lock:
            existing = self.entries.get(lfn)
            if existing is not None:
                if existing.content_digest != digest:
                    raise DigestConflict(f"{lfn} already stored with a different digest")
                return existing
            path = self._path_for(digest)
            shared = any(e.content_digest == digest for e in self.entries.values())
            if self.capacity is not None and not shared:
                evictable = sum(e.size_bytes for e in self.entries.values() if not e.pinned)
                if self.used_bytes - evictable + len(data) > self.capacity:
                    raise StorageFull(f"{len(data)} bytes do not fit in {self.capacity}")
            if not path.exists():
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                with open(tmp, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, path)
            self._access += 1
            now = self.clock.now()
            entry = StoredObject(
                lfn=lfn, sop_uid=sop_uid, path=str(path.relative_to(self.root)),
                content_digest=digest, size_bytes=len(data), stored_at=now,
                pinned=pinned, interim=interim, last_access=now, access_seq=self._access,
            )
            self.entries[lfn] = entry
            self._save()
            return entry

    def read(self, lfn: str) -> bytes:
        with self._lock:
            entry = self.entries.get(lfn)
            if entry is None:
                raise UnknownLfn(lfn)
            data = (self.root / entry.path).read_bytes()
        if digest_of(data) != entry.content_digest:
            raise DigestMismatch(f"vault copy of {lfn} no longer matches its digest")
        return data

    def remove(self, lfn: str) -> int:
        with self._lock:
            entry = self.entries.pop(lfn, None)
            if entry is None:
                return 0
            freed = 0
            if not any(e.content_digest == entry.content_digest for e in self.entries.values()):
                path = self.root / entry.path
                if path.exists():
                    path.unlink()
                freed = entry.size_bytes
            self._save()
            return freed

    def over_high_water(self) -> bool:
        return self.capacity is not None and self.used_bytes > self.high_water * self.capacity

    def evict(self) -> int:
        """Drop least-recently-used unpinned copies until under the low-water mark."""
        if self.capacity is None:
            return 0
        freed = 0
        with self._lock:
            if not self.over_high_water():
                return 0
            target = self.low_water * self.capacity
            candidates = sorted(
                (e for e in self.entries.values() if not e.pinned), key=lambda e: e.access_seq
            )
            for entry in candidates:
                if self.used_bytes <= target:
                    break
                freed += self.remove(entry.lfn)
                self.evictions.append(entry.lfn)
        return freed

    def verify_all(self) -> list[str]:
        """LFNs whose bytes on disk no longer match the recorded digest."""
        bad = []
        for lfn in list(self.entries):
            try:
                self.read(lfn)
            except (DigestMismatch, FileNotFoundError, UnknownLfn):
                bad.append(lfn)
        return bad
