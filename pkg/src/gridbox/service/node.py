"""The grid-box node: wires vault, catalogue, object store and query engine
together behind the workstation-facing and peer-facing operations.

Every public ``api_*`` method takes the caller's bearer token first. Peer
handlers (``serve_*``/``accept_subquery``) take the calling node's token.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

from gridbox.catalog import Catalog, sync_round
from gridbox.catalog.store import cursor_from_json
from gridbox.clock import SystemClock
from gridbox.dicom import is_valid_uid, parse_dicom, parse_sr, serialize_dicom
from gridbox.dicom.sr import is_structured_report
from gridbox.errors import (
    DanglingReference,
    DuplicateAssessment,
    FieldNotUpdatable,
    GridBoxError,
    InjectedFault,
    NotStructuredReport,
    Unauthorized,
    UnknownLfn,
    UnknownPatient,
    UnknownVocabulary,
)
from gridbox.mom import add_medical_event, assessment_from_sr, extract_metadata, pseudonymize
from gridbox.mom.records import SEXES, IdentityMapEntry, MedicalEvent, coerce_clinical, to_dict
from gridbox.objectstore import ObjectStore, Vault, make_lfn
from gridbox.objectstore.runner import ThreadedRunner
from gridbox.query import Query, QueryEngine, ResultSet, parse_query, query_to_doc
from gridbox.service.audit import AuditEntry, AuditLog
from gridbox.service.config import NodeConfig
from gridbox.service.auth import issue_token, verify_token

log = logging.getLogger(__name__)

PATIENT_FIELDS = ("patient.sex", "patient.birth_year", "patient.age_at_study")
STORE_STAGES = ("parse", "pseudonymize", "store_object", "extract", "catalog")
MIN_FORBIDDEN_LEN = 4  # shorter raw identifiers would match unrelated text


def interim_uid(base_uid: str, counter: int) -> str:
    """Fresh SOP instance UID for a merged copy of ``base_uid``."""
    uid = f"{base_uid}.99.{counter}"
    if is_valid_uid(uid):
        return uid
    digest = hashlib.sha256(f"{base_uid}/{counter}".encode()).digest()
    return f"2.25.{int.from_bytes(digest[:16], 'big')}"


class _EventStore:
    def __init__(self, node, vo):
        self.node, self.vo = node, vo
        self.events = node.catalog.events(vo)

    def has_patient(self, pid):
        return self.vo in self.node.catalog.patient_vos(pid)

    def put_event(self, event):
        self.node.catalog.append_local("ADD_EVENT", self.vo, {"event": to_dict(event)}, self.node.clock.now())


class GridBox:
    def __init__(self, config: NodeConfig, *, clock=None, runner=None, links=None):
        self.config = config
        self.node_id = config.node_id
        self.clock = clock or SystemClock()
        root = Path(config.vault_root)
        root.mkdir(parents=True, exist_ok=True)
        self.root = root
        self.catalog = Catalog(config.node_id, config.vos, log_path=root / "catalog.log")
        self.vault = Vault(root / "vault", self.clock, config.capacity, config.high_water, config.low_water)
        self.audit = AuditLog(root / "audit.log")
        self._identity_path = root / "identity.json"
        self.identity: dict[str, IdentityMapEntry] = self._load_identity()
        if links is None:
            from gridbox.service.http import HttpPeerClient

            links = {p.node_id: HttpPeerClient(p, self.peer_token) for p in config.peers}
        self.links = links
        self.store = ObjectStore(
            config.node_id, config.host, config.port, self.vault, self.catalog,
            peers=links, clock=self.clock, runner=runner or ThreadedRunner(),
        )
        self.engine = QueryEngine(
            config.node_id, self.catalog, self._vos_for,
            peers=list(links.values()), load_exemplar=self._load_exemplar,
            timeout=config.query_timeout,
        )
        self.faults: set[str] = set()
        self.merge_counter = 0
        self._store_lock = threading.Lock()
        self._peer_token = None
        self._sync_thread = None
        self._stop = threading.Event()

    # ----------------------------------------------------------- plumbing

    def _load_identity(self) -> dict:
        if not self._identity_path.exists():
            return {}
        data = json.loads(self._identity_path.read_text())
        return {k: IdentityMapEntry(**v) for k, v in data.items()}

    def _save_identity(self) -> None:
        data = {k: v.__dict__ for k, v in sorted(self.identity.items())}
        tmp = self._identity_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=1, sort_keys=True))
        os.replace(tmp, self._identity_path)

    def forbidden_values(self) -> list[str]:
        """Raw identifiers held in this node's identity vault."""
        out = set()
        for entry in self.identity.values():
            for value in (entry.original_patient_id, entry.original_patient_name):
                if value and len(value) >= MIN_FORBIDDEN_LEN:
                    out.add(value)
        return sorted(out)

    def _fault(self, stage: str) -> None:
        if stage in self.faults:
            raise InjectedFault(f"injected failure at {stage}")

    def authenticate(self, token):
        return verify_token(self.config.federation_secret, token, self.clock.now())

    def _vos_for(self, token) -> frozenset:
        return frozenset(self.authenticate(token).vo_set)

    def peer_token(self) -> str:
        """This node's own credential for peer-facing calls."""
        now = self.clock.now()
        if self._peer_token is None or self._peer_token.expires_at - now < 60:
            self._peer_token = issue_token(
                self.config.federation_secret, self.node_id, self.config.vos, now, ttl=86400.0
            )
        return self._peer_token.encode()

    def _audit(self, actor, action, refs, outcome="OK"):
        self.audit.record(AuditEntry(self.clock.now(), actor, action, tuple(refs), outcome), self.forbidden_values())

    def _guarded(self, token, action, fn, refs=()):
        """Authenticate, run ``fn(auth)``, and write exactly one audit entry."""
        auth = self.authenticate(token)
        try:
            result, refs, outcome = fn(auth)
        except GridBoxError as exc:
            self._audit(auth.subject, action, refs, exc.code)
            raise
        self._audit(auth.subject, action, refs, outcome)
        return result

    def _write_vo(self, auth, vo=None) -> str:
        vo = vo or self.config.default_vo
        if vo not in self.config.vos or vo not in auth.vo_set:
            raise Unauthorized(f"VO {vo!r} not writable with these credentials")
        return vo

    # ---------------------------------------------------------------- store

    def api_store(self, token, data: bytes, vo: str | None = None) -> str:
        return self._guarded(token, "STORE", lambda auth: self._store(auth, data, vo))

    def _store(self, auth, data, vo):
        vo = self._write_vo(auth, vo)
        self._fault("parse")
        obj = parse_dicom(data)
        if is_structured_report(obj):
            raise NotStructuredReport("structured reports go through store-sr")
        self._fault("pseudonymize")
        clean, identity = pseudonymize(obj, self.config.node_secret.encode(), self.node_id, self.clock.now())
        forbidden = set(self.forbidden_values())
        for value in (identity.original_patient_id, identity.original_patient_name):
            if value and len(value) >= MIN_FORBIDDEN_LEN:
                forbidden.add(value)
        blob = serialize_dicom(clean)
        sop_uid = clean.get_text("SOPInstanceUID")
        lfn = make_lfn(self.node_id, sop_uid)
        with self._store_lock:
            existing = self.catalog.lfn_entry(lfn)
            if existing is not None and self.vault.has(lfn):
                # DigestConflict if different bytes claim the same instance
                self.vault.put(lfn, sop_uid, blob, pinned=True)
                return lfn, [lfn], "UNCHANGED"
            fresh = not self.vault.has(lfn)
            try:
                self._fault("store_object")
                stored = self.store.store_object(blob, lfn, sop_uid, pinned=True)
                self._fault("extract")
                rows = sorted(extract_metadata(clean, lfn, self.node_id), key=lambda r: r.TABLE)
                self._fault("catalog")
                specs = [
                    ("REGISTER_LFN", vo, {
                        "lfn": lfn, "size_bytes": stored.size_bytes, "content_digest": stored.content_digest,
                        "origin": self.node_id, "sop_uid": sop_uid, "object_kind": "image", "references": [],
                    }),
                    ("UPSERT_ROW", vo, {"rows": [{"table": r.TABLE, "row": to_dict(r)} for r in rows]}),
                ]
                self.catalog.append_batch(specs, self.clock.now(), sorted(forbidden))
            except BaseException:
                if fresh:
                    self.vault.remove(lfn)
                raise
            self.identity.setdefault(identity.pseudonym_id, identity)
            self._save_identity()
        return lfn, [lfn], "OK"

    # ---------------------------------------------------------------- query

    def api_query(self, token, doc: dict) -> ResultSet:
        def run(auth):
            q = parse_query(doc, credentials=token if isinstance(token, str) else token.encode())
            result = self.engine.execute(q)
            return result, [q.scope, f"rows={len(result.rows)}"], "OK" if result.complete else "PARTIAL"

        return self._guarded(token, "QUERY", run)

    def query(self, token, q: Query) -> ResultSet:
        return self.api_query(token, _query_doc(q))

    def _load_exemplar(self, lfn: str):
        entry = self.catalog.lfn_entry(lfn)
        if entry is None:
            raise UnknownLfn(lfn)
        self.store.ensure_local(lfn)
        return parse_sr(parse_dicom(self.vault.read(lfn)))

    # ------------------------------------------------------------- retrieve

    def _authorize_lfn(self, lfn: str, vo_set):
        entry = self.catalog.lfn_entry(lfn, frozenset(vo_set))
        if entry is None:
            if self.catalog.lfn_entry(lfn) is not None:
                raise Unauthorized(f"{lfn} belongs to a VO outside the token")
            raise UnknownLfn(lfn)
        return entry

    def _case_key(self, lfn: str, vo_set) -> str:
        for fact in self.catalog.facts():
            if fact["image.lfn"] == lfn and fact["vo"] in vo_set:
                return fact["study.study_uid"]
        return lfn

    def api_retrieve_request(self, token, lfns) -> list:
        def run(auth):
            vos = frozenset(auth.vo_set)
            for lfn in lfns:
                self._authorize_lfn(lfn, vos)
            cases = defaultdict(list)
            for lfn in dict.fromkeys(lfns):
                cases[self._case_key(lfn, vos)].append(lfn)
            entries = self.store.request_retrieve([cases[k] for k in sorted(cases)], vos)
            return entries, list(lfns), "OK"

        return self._guarded(token, "RETRIEVE_REQUEST", run)

    # -------------------------------------------------------------- resolve

    def api_resolve(self, token, lfn: str, merged: bool = False):
        def run(auth):
            vos = frozenset(auth.vo_set)
            entry = self._authorize_lfn(lfn, vos)
            if not merged:
                return self.store.resolve(lfn, vos), [lfn], "OK"
            pfns = self._merge(entry, vos)
            return pfns, [lfn] + [str(p) for p in pfns], "OK"

        return self._guarded(token, "RESOLVE", run)

    def _merge(self, entry, vos) -> list:
        self.store.ensure_local(entry.lfn, vos)
        obj = parse_dicom(self.vault.read(entry.lfn))
        ds = obj.elements
        pid = ds.get_text("PatientID")
        meta = self.catalog.patient_meta(entry.vo, pid)
        if "patient.sex" in meta:
            ds.set_text("PatientSex", meta["patient.sex"] if meta["patient.sex"] != "UNKNOWN" else "")
        if "patient.birth_year" in meta and meta["patient.birth_year"] is not None:
            ds.set_text("PatientBirthDate", f"{int(meta['patient.birth_year']):04d}0101")
        if "patient.age_at_study" in meta and meta["patient.age_at_study"] is not None:
            ds.set_text("PatientAge", f"{int(meta['patient.age_at_study']):03d}Y")
        with self._store_lock:
            self.merge_counter += 1
            uid = interim_uid(entry.sop_uid, self.merge_counter)
        ds.set_text("SOPInstanceUID", uid)
        ds.set_text("MediaStorageSOPInstanceUID", uid)
        blob = serialize_dicom(obj)
        self.vault.put(f"interim:{uid}", uid, blob, pinned=False, interim=True)
        pfns = [self.store.local_pfn(uid)]
        study_uid = ds.get_text("StudyInstanceUID")
        study_sops = {
            f["image.sop_uid"] for f in self.catalog.facts()
            if f["study.study_uid"] == study_uid and f["vo"] == entry.vo
        } | {entry.sop_uid}
        srs = [
            e for (vo, _), (_, e) in sorted(self.catalog.lfns.items())
            if vo == entry.vo and e.object_kind == "sr" and study_sops & set(e.references)
        ]
        for sr in srs:
            self.store.ensure_local(sr.lfn, vos)
            self.vault.touch(sr.lfn)
            pfns.append(self.store.local_pfn(sr.sop_uid))
        return pfns

    # -------------------------------------------------------- metadata update

    def api_update_patient_meta(self, token, pseudonym_id: str, updates: dict) -> dict:
        def run(auth):
            vos = [vo for vo in self.catalog.patient_vos(pseudonym_id) if vo in auth.vo_set]
            if not vos:
                raise UnknownPatient(f"no patient {pseudonym_id!r} visible with these credentials")
            clean = {name: _coerce_update(name, value) for name, value in sorted(updates.items())}
            if not clean:
                raise FieldNotUpdatable("no fields given")
            now = self.clock.now()
            specs = [
                ("UPDATE_PATIENT_META", vo, {"patient_id": pseudonym_id, "updates": clean}) for vo in vos
            ]
            changes = self.catalog.append_batch(specs, now, self.forbidden_values())
            ack = {"patient_id": pseudonym_id, "fields": sorted(clean), "changes": [list(c.id) for c in changes]}
            return ack, [pseudonym_id] + sorted(clean), "OK"

        return self._guarded(token, "UPDATE_META", run)

    # ------------------------------------------------------------- store SR

    def api_store_sr(self, token, data: bytes) -> str:
        return self._guarded(token, "STORE_SR", lambda auth: self._store_sr(auth, data))

    def _store_sr(self, auth, data):
        obj = parse_dicom(data)
        doc = parse_sr(obj)
        if not doc.referenced_sop_uids:
            raise DanglingReference("SR references no image")
        targets = []
        for uid in doc.referenced_sop_uids:
            target = self.catalog.lfn_by_sop(uid)
            if target is None or target.vo not in auth.vo_set:
                raise DanglingReference(f"referenced SOP instance {uid} is unknown")
            targets.append(target)
        vo = targets[0].vo
        pid = obj.get_text("PatientID", "")
        forbidden = set(self.forbidden_values())
        identity = None
        if pid and vo in self.catalog.patient_vos(pid):
            clean = obj  # already carries a pseudonym
        else:
            clean, identity = pseudonymize(obj, self.config.node_secret.encode(), self.node_id, self.clock.now())
            forbidden |= {
                v for v in (identity.original_patient_id, identity.original_patient_name)
                if v and len(v) >= MIN_FORBIDDEN_LEN
            }
        blob = serialize_dicom(clean)
        sop_uid = clean.get_text("SOPInstanceUID")
        lfn = make_lfn(self.node_id, sop_uid)
        assessment = assessment_from_sr(doc)
        if assessment.source_sr_lfn != lfn:
            assessment = replace(assessment, source_sr_lfn=lfn)
        with self._store_lock:
            existing = self.catalog.get_row("assessment", vo, assessment.assessment_id)
            if self.catalog.lfn_entry(lfn) is not None and existing is not None:
                self.vault.put(lfn, sop_uid, blob, pinned=True)
                return lfn, [lfn], "UNCHANGED"
            for other in self.catalog.table("assessment", [vo]):
                if (
                    other.assessment_id != assessment.assessment_id
                    and (other.study_uid, other.author, other.authored_at)
                    == (assessment.study_uid, assessment.author, assessment.authored_at)
                ):
                    raise DuplicateAssessment(f"{other.assessment_id} already records this reading")
            fresh = not self.vault.has(lfn)
            try:
                stored = self.store.store_object(blob, lfn, sop_uid, pinned=True)
                specs = [
                    ("REGISTER_LFN", vo, {
                        "lfn": lfn, "size_bytes": stored.size_bytes, "content_digest": stored.content_digest,
                        "origin": self.node_id, "sop_uid": sop_uid, "object_kind": "sr",
                        "references": list(doc.referenced_sop_uids),
                    }),
                    ("ADD_ASSESSMENT", vo, {"assessment": to_dict(assessment)}),
                ]
                self.catalog.append_batch(specs, self.clock.now(), sorted(forbidden))
            except BaseException:
                if fresh:
                    self.vault.remove(lfn)
                raise
            if identity is not None:
                self.identity.setdefault(identity.pseudonym_id, identity)
                self._save_identity()
        return lfn, [lfn, assessment.assessment_id], "OK"

    # ------------------------------------------------------ medical events

    def api_add_event(self, token, event: MedicalEvent) -> str:
        def run(auth):
            vos = [vo for vo in self.catalog.patient_vos(event.patient_id) if vo in auth.vo_set]
            if not vos:
                raise UnknownPatient(f"no patient {event.patient_id!r} visible with these credentials")
            add_medical_event(event, _EventStore(self, vos[0]))
            return event.event_id, [event.event_id], "OK"

        return self._guarded(token, "ADD_EVENT", run)

    # ------------------------------------------------------ peer endpoints

    def _peer_vos(self, token) -> frozenset:
        auth = self.authenticate(token)
        shared = self.catalog.vo_set & frozenset(auth.vo_set)
        if not shared:
            raise Unauthorized(f"{auth.subject} shares no VO with {self.node_id}")
        return shared

    def serve_changes(self, token, cursor) -> list:
        shared = self._peer_vos(token)
        if isinstance(cursor, dict) and not any(isinstance(k, tuple) for k in cursor):
            cursor = cursor_from_json(cursor)
        return self.catalog.pull_changes(shared, cursor)

    def serve_object(self, token, sop_uid: str) -> bytes:
        shared = self._peer_vos(token)
        stored = self.vault.by_sop(sop_uid)
        entry = self.catalog.lfn_by_sop(sop_uid)
        if stored is None or stored.interim or entry is None:
            raise UnknownLfn(f"no object {sop_uid} here")
        if not self.catalog.lfn_entries(entry.lfn, shared):
            raise Unauthorized(f"{sop_uid} is outside the shared VOs")
        return self.vault.read(stored.lfn)

    def accept_subquery(self, token, doc: dict) -> ResultSet:
        shared = self._peer_vos(token)
        q = parse_query(doc, credentials=token)
        q = Query(q.predicate, q.similarity, q.projection, "LOCAL_ONLY", q.credentials)
        return self.engine.execute_local(q, shared)

    # --------------------------------------------------------------- sync

    def sync_once(self) -> int:
        applied = sync_round(self.catalog, [self.links[k] for k in sorted(self.links)])
        if applied:
            self._audit(self.node_id, "SYNC", [f"applied={applied}"])
        return applied

    def start_sync_loop(self) -> None:
        def loop():
            while not self._stop.wait(self.config.sync_interval):
                try:
                    self.sync_once()
                except Exception:  # keep the loop alive
                    log.exception("sync round failed")

        self._sync_thread = threading.Thread(target=loop, name=f"sync-{self.node_id}", daemon=True)
        self._sync_thread.start()

    def stop(self) -> None:
        self._stop.set()


def _coerce_update(name: str, value):
    if name == "patient.sex":
        if value not in SEXES:
            raise FieldNotUpdatable(f"patient.sex must be one of {SEXES}")
        return value
    if name in ("patient.birth_year", "patient.age_at_study"):
        try:
            number = int(value)
        except (TypeError, ValueError):
            raise FieldNotUpdatable(f"{name} expects an integer, got {value!r}") from None
        if not 0 <= number <= (9999 if name == "patient.birth_year" else 150):
            raise FieldNotUpdatable(f"{name}={number} out of range")
        return number
    if name.startswith("clinical."):
        try:
            return coerce_clinical(name[len("clinical."):], value)
        except UnknownVocabulary as exc:
            raise FieldNotUpdatable(str(exc)) from None
    raise FieldNotUpdatable(f"{name} is not an updatable field")


def _query_doc(q: Query) -> dict:
    return query_to_doc(q)
