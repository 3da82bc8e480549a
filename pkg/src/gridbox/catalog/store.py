"""Node-local catalogue: write-ahead change log plus derived row state.

Row state is a pure function of the set of applied changes. Rows and patient
meta fields are last-writer-wins registers ordered by ``(wall_time, origin,
seq)``, so any apply order yields the same state.

Replication streams are keyed by ``(origin, vo)``. Sequence numbers are
assigned per origin and are gap-free there; a stream seen through a VO filter
has holes where the origin wrote to other VOs, so each pulled stream carries
an ``upto`` mark saying how far the sender's copy of it is complete.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

from gridbox.catalog.changes import CatalogChange, ChangeLog, canonical_json, check_no_leak
from gridbox.errors import SequenceGap, Unauthorized, UnknownAttribute
from gridbox.mom.records import record_from_dict
from gridbox.query.predicate import evaluate, referenced_paths, schema

log = logging.getLogger(__name__)

PATIENT_META_FIELDS = ("patient.sex", "patient.birth_year", "patient.age_at_study")


@dataclass
class LfnEntry:
    lfn: str
    size_bytes: int
    content_digest: str
    origin: str
    sop_uid: str
    vo: str
    object_kind: str = "image"
    references: tuple = ()
    replicas: set = field(default_factory=set)

    def __post_init__(self):
        self.replicas = set(self.replicas) | {self.origin}

    def dump(self) -> dict:
        # replicas beyond the origin are node-local cache state, not replicated
        return {
            "lfn": self.lfn,
            "size_bytes": self.size_bytes,
            "content_digest": self.content_digest,
            "origin": self.origin,
            "sop_uid": self.sop_uid,
            "object_kind": self.object_kind,
            "references": list(self.references),
        }


@dataclass
class StreamBatch:
    origin: str
    vo: str
    upto: int
    changes: list

    def to_json(self) -> dict:
        return {
            "origin": self.origin,
            "vo": self.vo,
            "upto": self.upto,
            "changes": [c.to_json() for c in self.changes],
        }

    @classmethod
    def from_json(cls, data: dict) -> "StreamBatch":
        return cls(
            data["origin"], data["vo"], int(data["upto"]),
            [CatalogChange.from_json(c) for c in data["changes"]],
        )


def cursor_to_json(cursor: dict) -> dict:
    return {f"{origin}|{vo}": seq for (origin, vo), seq in sorted(cursor.items())}


def cursor_from_json(data: dict) -> dict:
    out = {}
    for key, seq in (data or {}).items():
        origin, _, vo = key.rpartition("|")
        out[(origin, vo)] = int(seq)
    return out


class Catalog:
    def __init__(self, node_id: str, vo_set, log_path=None):
        self.node_id = node_id
        self.vo_set = frozenset(vo_set)
        self._lock = threading.RLock()
        self._log = ChangeLog(log_path) if log_path else None
        self.changes: list[CatalogChange] = []
        self._applied: set[tuple[str, int]] = set()
        self._streams: dict[tuple[str, str], list[CatalogChange]] = {}
        self.known: dict[tuple[str, str], int] = {}
        self.local_seq = 0
        self.rows: dict[tuple[str, str, str], tuple[tuple, object]] = {}
        self.meta: dict[tuple[str, str, str], tuple[tuple, object]] = {}
        self.lfns: dict[tuple[str, str], tuple[tuple, LfnEntry]] = {}
        self.version = 0
        self._facts_cache = None
        if self._log is not None:
            for change in self._log.read():
                self._apply(change)

    # ---------------------------------------------------------------- writes

    def append_local(self, kind: str, vo: str, payload: dict, wall_time: float, forbidden_values=()):
        """Create and apply the next locally originated change."""
        return self.append_batch([(kind, vo, payload)], wall_time, forbidden_values)[0]

    def append_batch(self, specs, wall_time: float, forbidden_values=()) -> list[CatalogChange]:
        """Append several local changes with a single log write (all or nothing)."""
        with self._lock:
            out = []
            seq = self.local_seq
            for kind, vo, payload in specs:
                if vo not in self.vo_set:
                    raise Unauthorized(f"node {self.node_id} is not a member of VO {vo!r}")
                check_no_leak(payload, forbidden_values)
                seq += 1
                out.append(CatalogChange(self.node_id, seq, vo, kind, payload, wall_time))
            if self._log is not None:
                self._log.append(out)
            for change in out:
                self._apply(change)
            return out

    def append_change(self, change: CatalogChange):
        """Apply one change, durably logging it first. Re-applying is a no-op."""
        with self._lock:
            if change.id in self._applied:
                return None
            if change.origin == self.node_id and change.seq != self.local_seq + 1:
                raise SequenceGap(f"local seq {self.local_seq} then {change.seq}")
            if change.vo not in self.vo_set:
                raise Unauthorized(f"change for VO {change.vo!r} outside {sorted(self.vo_set)}")
            check_no_leak(change.payload)
            if self._log is not None:
                self._log.append([change])
            self._apply(change)
            return change

    def apply_stream(self, batch: StreamBatch) -> int:
        """Apply a pulled stream in order and advance its completeness mark."""
        with self._lock:
            if batch.vo not in self.vo_set:
                return 0
            key = (batch.origin, batch.vo)
            applied, last = 0, self.known.get(key, 0)
            for change in batch.changes:
                if (change.origin, change.vo) != key:
                    raise SequenceGap("change does not belong to its stream")
                if change.seq > batch.upto:
                    raise SequenceGap(f"change {change.seq} beyond stream mark {batch.upto}")
                if change.id in self._applied:
                    continue
                if change.seq <= last:
                    raise SequenceGap(f"stream {key} regressed to {change.seq} after {last}")
                last = change.seq
                if self.append_change(change) is not None:
                    applied += 1
            if batch.origin != self.node_id and batch.upto > self.known.get(key, 0):
                self.known[key] = batch.upto
            return applied

    def _apply(self, change: CatalogChange) -> None:
        if change.id in self._applied:
            return
        self._applied.add(change.id)
        self.changes.append(change)
        self._streams.setdefault((change.origin, change.vo), []).append(change)
        if change.origin == self.node_id:
            self.local_seq = max(self.local_seq, change.seq)
        else:
            key = (change.origin, change.vo)
            self.known[key] = max(self.known.get(key, 0), change.seq)
        handler = getattr(self, f"_apply_{change.kind.lower()}")
        handler(change)
        self.version += 1
        self._facts_cache = None

    def _put_row(self, table: str, vo: str, key: str, stamp: tuple, record) -> None:
        slot = (table, vo, key)
        current = self.rows.get(slot)
        if current is None or stamp > current[0]:
            self.rows[slot] = (stamp, record)

    def _apply_register_lfn(self, change):
        p = change.payload
        entry = LfnEntry(
            lfn=p["lfn"], size_bytes=int(p["size_bytes"]), content_digest=p["content_digest"],
            origin=p["origin"], sop_uid=p["sop_uid"], vo=change.vo,
            object_kind=p.get("object_kind", "image"), references=tuple(p.get("references", ())),
        )
        slot = (change.vo, entry.lfn)
        current = self.lfns.get(slot)
        if current is None or change.stamp > current[0]:
            if current is not None:
                entry.replicas |= current[1].replicas
            self.lfns[slot] = (change.stamp, entry)

    def _apply_upsert_row(self, change):
        for item in change.payload["rows"]:
            record = record_from_dict(item["table"], item["row"])
            self._put_row(item["table"], change.vo, record.key, change.stamp, record)

    def _apply_update_patient_meta(self, change):
        pid = change.payload["patient_id"]
        for name, value in change.payload["updates"].items():
            slot = (change.vo, pid, name)
            current = self.meta.get(slot)
            if current is None or change.stamp > current[0]:
                self.meta[slot] = (change.stamp, value)

    def _apply_add_assessment(self, change):
        record = record_from_dict("assessment", change.payload["assessment"])
        self._put_row("assessment", change.vo, record.key, change.stamp, record)

    def _apply_add_event(self, change):
        record = record_from_dict("event", change.payload["event"])
        self._put_row("event", change.vo, record.key, change.stamp, record)

    # ----------------------------------------------------------------- reads

    def head(self, origin: str, vo: str) -> int:
        if origin == self.node_id:
            return self.local_seq
        return self.known.get((origin, vo), 0)

    def cursor(self) -> dict:
        """Completeness marks for every stream this node holds."""
        with self._lock:
            out = dict(self.known)
            for vo in self.vo_set:
                out[(self.node_id, vo)] = self.local_seq
            return out

    def pull_changes(self, caller_vos, since: dict | None = None) -> list[StreamBatch]:
        """Changes beyond ``since`` restricted to VOs shared with the caller."""
        shared = self.vo_set & frozenset(caller_vos)
        if not shared:
            raise Unauthorized(f"no VO shared with {sorted(self.vo_set)}")
        since = since or {}
        with self._lock:
            origins = {o for (o, _) in self.known} | {self.node_id}
            out = []
            for origin in sorted(origins):
                for vo in sorted(shared):
                    mark = since.get((origin, vo), 0)
                    upto = self.head(origin, vo)
                    if upto <= mark:
                        continue
                    changes = [c for c in self._streams.get((origin, vo), ()) if c.seq > mark]
                    changes.sort(key=lambda c: c.seq)
                    out.append(StreamBatch(origin, vo, upto, changes))
            return out

    def get_row(self, table: str, vo: str, key: str):
        slot = self.rows.get((table, vo, key))
        return slot[1] if slot else None

    def table(self, table: str, vo_set=None) -> list:
        vo_set = self.vo_set if vo_set is None else frozenset(vo_set)
        with self._lock:
            return [rec for (t, vo, _), (_, rec) in sorted(self.rows.items()) if t == table and vo in vo_set]

    def lfn_entries(self, lfn: str, vo_set=None) -> list[LfnEntry]:
        vo_set = self.vo_set if vo_set is None else frozenset(vo_set)
        with self._lock:
            return [e for (vo, name), (_, e) in sorted(self.lfns.items()) if name == lfn and vo in vo_set]

    def lfn_entry(self, lfn: str, vo_set=None) -> LfnEntry | None:
        entries = self.lfn_entries(lfn, vo_set)
        return entries[0] if entries else None

    def lfn_by_sop(self, sop_uid: str) -> LfnEntry | None:
        with self._lock:
            for (_, _), (_, entry) in sorted(self.lfns.items()):
                if entry.sop_uid == sop_uid:
                    return entry
        return None

    def patient_vos(self, pid: str) -> list[str]:
        with self._lock:
            return sorted(vo for (t, vo, key) in self.rows if t == "patient" and key == pid)

    def patient_meta(self, vo: str, pid: str) -> dict:
        with self._lock:
            return {name: value for (v, p, name), (_, value) in sorted(self.meta.items()) if v == vo and p == pid}

    def events(self, vo: str) -> dict:
        with self._lock:
            return {key: rec for (t, v, key), (_, rec) in self.rows.items() if t == "event" and v == vo}

    def dump(self, vo_set=None) -> str:
        """Canonical dump: one JSON record per line, sorted, restricted to ``vo_set``."""
        from gridbox.mom.records import to_dict

        vo_set = self.vo_set if vo_set is None else frozenset(vo_set)
        lines = []
        with self._lock:
            for (table, vo, key), (_, record) in self.rows.items():
                if vo in vo_set:
                    lines.append(canonical_json({"t": table, "vo": vo, "key": key, "row": to_dict(record)}))
            for (vo, pid, name), (_, value) in self.meta.items():
                if vo in vo_set:
                    lines.append(canonical_json({"t": "meta", "vo": vo, "key": f"{pid}/{name}", "value": value}))
            for (vo, lfn), (_, entry) in self.lfns.items():
                if vo in vo_set:
                    lines.append(canonical_json({"t": "lfn", "vo": vo, "key": lfn, "entry": entry.dump()}))
        lines.sort()
        return "".join(line.decode() + "\n" for line in lines)

    # ------------------------------------------------------------ query view

    def facts(self) -> list[dict]:
        """One flat attribute map per image row, joined up the hierarchy."""
        with self._lock:
            if self._facts_cache is not None and self._facts_cache[0] == self.version:
                return self._facts_cache[1]
            by_table: dict[str, dict] = {}
            for (table, vo, key), (_, rec) in self.rows.items():
                by_table.setdefault(table, {})[(vo, key)] = rec
            assessments: dict = {}
            for (vo, _), a in by_table.get("assessment", {}).items():
                assessments.setdefault((vo, a.study_uid), []).append(a)
            events: dict = {}
            for (vo, _), e in by_table.get("event", {}).items():
                events.setdefault((vo, e.patient_id), []).append(e)
            meta_by: dict = {}
            for (vo, pid, name), (_, value) in sorted(self.meta.items()):
                meta_by.setdefault((vo, pid), {})[name] = value
            out = []
            for (vo, _), image in by_table.get("image", {}).items():
                series = by_table.get("series", {}).get((vo, image.series_uid))
                study = series and by_table.get("study", {}).get((vo, series.study_uid))
                patient = study and by_table.get("patient", {}).get((vo, study.patient_id))
                if patient is None:
                    continue  # not yet joinable
                meta = meta_by.get((vo, patient.pseudonym_id), {})
                fact = {
                    "vo": vo,
                    "patient.pseudonym_id": patient.pseudonym_id,
                    "patient.sex": meta.get("patient.sex", patient.sex),
                    "patient.birth_year": meta.get("patient.birth_year", patient.birth_year),
                    "patient.age_at_study": meta.get("patient.age_at_study", study.age_at_study),
                    "patient.origin_node": patient.origin_node,
                    "study.study_uid": study.study_uid,
                    "study.study_date": study.study_date or None,
                    "study.description": study.description,
                    "series.series_uid": series.series_uid,
                    "series.modality": series.modality,
                    "series.manufacturer": series.manufacturer,
                    "image.sop_uid": image.sop_uid,
                    "image.sop_class_uid": image.sop_class_uid,
                    "image.laterality": image.laterality or None,
                    "image.view_position": image.view_position or None,
                    "image.rows": image.rows,
                    "image.columns": image.columns,
                    "image.lfn": image.lfn,
                }
                for name, value in meta.items():
                    if name.startswith("clinical."):
                        fact[name] = value
                study_assessments = sorted(assessments.get((vo, study.study_uid), []), key=lambda a: a.assessment_id)
                fact["_assessments"] = study_assessments
                fact["assessment.assessment_id"] = [a.assessment_id for a in study_assessments]
                fact["assessment.author"] = [a.author for a in study_assessments]
                fact["assessment.equipment"] = [a.equipment for a in study_assessments]
                fact["assessment.composition"] = [a.composition for a in study_assessments]
                fact["assessment.category"] = [a.category for a in study_assessments]
                findings = [f for a in study_assessments for f in a.findings]
                fact["assessment.finding_type"] = [f.finding_type for f in findings]
                fact["assessment.finding_laterality"] = [f.laterality for f in findings]
                fact["assessment.quadrant"] = [f.quadrant for f in findings if f.quadrant]
                fact["event.kind"] = sorted(e.kind for e in events.get((vo, patient.pseudonym_id), []))
                out.append(fact)
            out.sort(key=lambda f: (f["study.study_date"] or "", f["image.lfn"], f["vo"]))
            self._facts_cache = (self.version, out)
            return out

    def local_select(self, predicate, vo_set) -> list[dict]:
        """Image facts matching ``predicate`` within the authorized VOs."""
        known = schema()["paths"]
        for path in referenced_paths(predicate):
            if path not in known:
                raise UnknownAttribute(path)
        allowed = self.vo_set & frozenset(vo_set)
        return [f for f in self.facts() if f["vo"] in allowed and evaluate(predicate, f)]


def sync_round(catalog: Catalog, peers) -> int:
    """Pull from every peer once. ``peers`` expose ``node_id`` and ``pull(cursor)``."""
    from gridbox.errors import PeerUnreachable

    applied = 0
    for peer in peers:
        try:
            batches = peer.pull(catalog.cursor())
        except PeerUnreachable as exc:
            log.warning("sync: peer %s unreachable: %s", peer.node_id, exc)
            continue
        except Unauthorized:
            log.info("sync: no shared VO with %s", peer.node_id)
            continue
        for batch in batches:
            applied += catalog.apply_stream(batch)
    return applied
