"""LFN to PFN resolution, prefetching and access-time estimates.

A file is in one of three states on a node: LOCAL (bytes in the vault),
FETCHING (one inbound transfer in flight) or REMOTE. Estimated access time:

* LOCAL: 0
* REMOTE: size / configured link rate + link round-trip time
* FETCHING: remaining bytes / rate measured since the first byte, capped at
  the REMOTE estimate so the ordering LOCAL <= FETCHING <= REMOTE holds
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

from gridbox.errors import DigestMismatch, FetchFailed, PeerUnreachable, UnknownLfn
from gridbox.objectstore.pfn import Pfn
from gridbox.objectstore.runner import ThreadedRunner
from gridbox.objectstore.vault import StoredObject, Vault, digest_of

log = logging.getLogger(__name__)

REMOTE, FETCHING, LOCAL = "REMOTE", "FETCHING", "LOCAL"


@dataclass
class ObjectStream:
    """An opened inbound transfer: announced digest and size, then chunks."""

    digest: str
    size: int
    chunks: object


@dataclass
class TransferState:
    lfn: str
    state: str
    size: int
    source: str | None = None
    started_at: float = 0.0
    first_byte_at: float | None = None
    bytes_received: int = 0
    task: object = None
    error: BaseException | None = None


@dataclass
class RetrieveEntry:
    lfn: str
    eat_seconds: float
    case_eat_seconds: float
    case: int
    state: str


@dataclass
class StoreStats:
    transfers_started: int = 0
    transfers_completed: int = 0
    digest_mismatches: int = 0
    by_lfn: dict = field(default_factory=dict)


class ObjectStore:
    def __init__(
        self,
        node_id: str,
        host: str,
        port: int,
        vault: Vault,
        catalog,
        peers: dict | None = None,
        clock=None,
        runner=None,
        retries: int = 2,
        resolve_timeout: float = 30.0,
    ):
        self.node_id = node_id
        self.host = host
        self.port = port
        self.vault = vault
        self.catalog = catalog
        self.peers = peers if peers is not None else {}
        self.clock = clock or vault.clock
        self.runner = runner or ThreadedRunner()
        self.retries = retries
        self.resolve_timeout = resolve_timeout
        self.transfers: dict[str, TransferState] = {}
        self.stats = StoreStats()
        self._lock = threading.RLock()

    # ------------------------------------------------------------- helpers

    def local_pfn(self, sop_uid: str) -> Pfn:
        return Pfn(self.host, self.port, self.node_id, sop_uid)

    def _entry(self, lfn: str, vo_set=None):
        entry = self.catalog.lfn_entry(lfn, vo_set)
        if entry is None:
            raise UnknownLfn(lfn)
        return entry

    def state(self, lfn: str) -> str:
        with self._lock:
            if self.vault.has(lfn):
                return LOCAL
            if lfn in self.transfers:
                return FETCHING
            return REMOTE

    def remote_pfn(self, entry) -> Pfn:
        peer = self.peers.get(entry.origin)
        if peer is None:
            raise FetchFailed(f"no route to origin {entry.origin} of {entry.lfn}")
        return Pfn(peer.host, peer.port, entry.origin, entry.sop_uid)

    # ----------------------------------------------------------------- store

    def store_object(self, data: bytes, lfn: str, sop_uid: str, *, pinned: bool = True) -> StoredObject:
        stored = self.vault.put(lfn, sop_uid, data, pinned=pinned)
        entry = self.catalog.lfn_entry(lfn)
        if entry is not None:
            entry.replicas.add(self.node_id)
        return stored

    def read(self, lfn: str) -> bytes:
        return self.vault.read(lfn)

    # ------------------------------------------------------------------- EAT

    def remote_estimate(self, entry) -> float:
        peer = self.peers.get(entry.origin)
        if peer is None:
            return float("inf")
        return entry.size_bytes / peer.rate + peer.rtt

    def estimate_access_time(self, lfn: str, vo_set=None) -> float:
        entry = self._entry(lfn, vo_set)
        with self._lock:
            if self.vault.has(lfn):
                return 0.0
            transfer = self.transfers.get(lfn)
        full = self.remote_estimate(entry)
        if transfer is None:
            return full
        return min(full, fetching_estimate(transfer, self.clock.now(), full))

    def request_retrieve(self, cases, vo_set=None) -> list[RetrieveEntry]:
        """Order cases by their slowest file and start prefetching what is not local."""
        cases = [list(c) for c in cases]
        for case in cases:
            for lfn in case:
                self._entry(lfn, vo_set)
        rows = []
        for index, case in enumerate(cases):
            eats = {lfn: self.estimate_access_time(lfn, vo_set) for lfn in case}
            states = {lfn: self.state(lfn) for lfn in case}
            case_eat = max(eats.values(), default=0.0)
            case_key = min(case, default="")
            # a transfer with every byte in but not yet committed estimates 0 s; it still ranks after local cases
            pending = any(s != LOCAL for s in states.values())
            for lfn in case:
                entry = RetrieveEntry(lfn, eats[lfn], case_eat, index, states[lfn])
                rows.append((pending, case_eat, case_key, lfn, entry))
        for lfn in sorted({r[3] for r in rows}):
            if self.state(lfn) == REMOTE:
                self._start(self._entry(lfn, vo_set))
        rows.sort(key=lambda r: r[:4])
        return [r[4] for r in rows]

    # --------------------------------------------------------------- fetching

    def _start(self, entry, source: str | None = None) -> TransferState:
        """Begin (or join) the single inbound transfer for ``entry``."""
        with self._lock:
            existing = self.transfers.get(entry.lfn)
            if existing is not None:
                return existing
            transfer = TransferState(entry.lfn, FETCHING, entry.size_bytes, started_at=self.clock.now())
            self.transfers[entry.lfn] = transfer
            self.stats.transfers_started += 1
            self.stats.by_lfn[entry.lfn] = self.stats.by_lfn.get(entry.lfn, 0) + 1
            transfer.task = self.runner.submit(
                self._fetch_job(entry, transfer, source), self._finished, name=entry.lfn
            )
            return transfer

    def _sources(self, entry, preferred: str | None) -> list[str]:
        order = [preferred] if preferred else []
        order += [entry.origin] + sorted(entry.replicas - {entry.origin})
        return [s for s in dict.fromkeys(order) if s != self.node_id and s in self.peers]

    def _fetch_job(self, entry, transfer: TransferState, preferred: str | None):
        sources = self._sources(entry, preferred)
        last_error: Exception | None = None
        for _attempt in range(max(1, self.retries)):
            for source in sources:
                try:
                    stream = self.peers[source].open_object(entry.sop_uid)
                    transfer.source = source
                    transfer.first_byte_at = self.clock.now()
                    transfer.bytes_received = 0
                    buf = bytearray()
                    for chunk in stream.chunks:
                        buf += chunk
                        transfer.bytes_received = len(buf)
                        yield
                except PeerUnreachable as exc:
                    last_error = exc
                    continue
                data = bytes(buf)
                if digest_of(data) != entry.content_digest:
                    self.stats.digest_mismatches += 1
                    raise DigestMismatch(f"{entry.lfn}: received bytes do not match catalogue digest")
                stored = self.vault.put(entry.lfn, entry.sop_uid, data, pinned=False)
                entry.replicas.add(self.node_id)
                self.vault.evict()
                return stored
        raise FetchFailed(f"{entry.lfn}: no source reachable ({last_error})")

    def _finished(self, task) -> None:
        with self._lock:
            transfer = self.transfers.pop(task.name, None)
            if transfer is not None:
                transfer.error = task.error
                transfer.state = REMOTE if task.error else LOCAL
            if task.error is None:
                self.stats.transfers_completed += 1
            else:
                log.warning("transfer of %s failed: %s", task.name, task.error)

    def _wait(self, transfer: TransferState, timeout: float | None):
        if not self.runner.wait(transfer.task, timeout):
            raise FetchFailed(f"{transfer.lfn}: still fetching after {timeout}s")
        if transfer.task.error is not None:
            raise transfer.task.error
        return transfer.task.result

    def fetch_object(self, lfn: str, source: str | None = None, vo_set=None) -> StoredObject:
        """Synchronously bring ``lfn`` into the local cache (joins an in-flight transfer)."""
        entry = self._entry(lfn, vo_set)
        with self._lock:
            if self.vault.has(lfn):
                return self.vault.get(lfn)
            transfer = self._start(entry, source)
        self._wait(transfer, self.resolve_timeout)
        return self.vault.get(lfn)

    def resolve(self, lfn: str, vo_set=None) -> Pfn:
        entry = self._entry(lfn, vo_set)
        with self._lock:
            if self.vault.has(lfn):
                self.vault.touch(lfn)
                return self.local_pfn(entry.sop_uid)
            transfer = self.transfers.get(lfn)
            if transfer is None:
                if entry.origin == self.node_id:
                    raise FetchFailed(f"origin copy of {lfn} is missing from the vault")
                pfn = self.remote_pfn(entry)
                self._start(entry)
                return pfn
        try:
            self._wait(transfer, self.resolve_timeout)
        except FetchFailed:
            raise
        except Exception as exc:
            raise FetchFailed(f"{lfn}: {exc}") from exc
        self.vault.touch(lfn)
        return self.local_pfn(entry.sop_uid)

    def ensure_local(self, lfn: str, vo_set=None) -> StoredObject:
        """Blocking variant used when bytes are needed on this node."""
        try:
            return self.fetch_object(lfn, vo_set=vo_set)
        except (DigestMismatch, FetchFailed):
            raise
        except Exception as exc:
            raise FetchFailed(f"{lfn}: {exc}") from exc

    def evict(self) -> int:
        return self.vault.evict()


def fetching_estimate(transfer: TransferState, now: float, fallback: float) -> float:
    if transfer.first_byte_at is None or transfer.bytes_received <= 0:
        return fallback
    elapsed = now - transfer.first_byte_at
    if elapsed <= 0:
        return fallback
    rate = transfer.bytes_received / elapsed
    return max(transfer.size - transfer.bytes_received, 0) / rate
