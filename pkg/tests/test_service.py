import json

import pytest

from conftest import SECRET, make_token
from gridbox.dicom import build_sr, parse_dicom, serialize_dicom
from gridbox.errors import (
    DanglingReference,
    DigestConflict,
    DuplicateAssessment,
    FieldNotUpdatable,
    InjectedFault,
    InvalidToken,
    NotDicom,
    NotStructuredReport,
    Unauthorized,
    UnknownLfn,
    UnknownPatient,
)
from gridbox.mom import Assessment, Finding, MedicalEvent, pseudonym_for, sr_from_assessment
from gridbox.objectstore import digest_of
from gridbox.service import ApiClient, FederationToken, GridBox, Request, handle, interim_uid, issue_token, load_config
from gridbox.service.auth import verify_token
from gridbox.service.node import STORE_STAGES


class Local:
    """Transport that hands requests straight to a node."""

    def __init__(self, node):
        self.node = node

    def send(self, req, timeout=None):
        return handle(self.node, req)


def sr_for(node, lfn, n=1, **fields):
    """Serialized SR annotating the stored image ``lfn``."""
    fact = next(f for f in node.catalog.facts() if f["image.lfn"] == lfn)
    spec = dict(
        assessment_id=f"A{n}", study_uid=fact["study.study_uid"], author="dr.who", authored_at=f"2005010{n}T1200",
        equipment="ws", composition="SCATTERED", findings=(Finding("MASS", "L", "UOQ"),),
    )
    spec.update(fields)
    doc = sr_from_assessment(Assessment(**spec), (fact["image.sop_uid"],))
    obj = build_sr(doc, sop_uid=f"{fact['image.sop_uid']}.77.{n}", study_uid=fact["study.study_uid"],
                   series_uid=f"{fact['series.series_uid']}.77", patient_id=fact["patient.pseudonym_id"])
    return serialize_dicom(obj)


@pytest.fixture
def node(make_node):
    return make_node()


@pytest.fixture
def stored(node, token, small_corpus):
    lfns = [node.api_store(token, blob) for _, blob in small_corpus]
    return lfns


# ------------------------------------------------------------------ store


def test_store_registers_image(node, token, small_corpus):
    img, blob = small_corpus[0]
    lfn = node.api_store(token, blob)
    assert lfn == f"mg://GB1/{img.sop_uid}"
    pid = pseudonym_for(node.config.node_secret, "GB1", img.patient_id, img.patient_name)
    (fact,) = node.catalog.facts()
    assert fact["patient.pseudonym_id"] == pid and fact["vo"] == "mammo"
    assert node.identity[pid].original_patient_id == img.patient_id
    data = node.vault.read(lfn)
    assert img.patient_id.encode() not in data
    assert node.catalog.lfn_entry(lfn).content_digest == digest_of(data)


def test_restore_is_unchanged(node, token, small_corpus):
    _, blob = small_corpus[0]
    node.api_store(token, blob)
    before = (node.catalog.dump(), len(node.catalog.changes), dict(node.vault.entries))
    node.api_store(token, blob)
    assert (node.catalog.dump(), len(node.catalog.changes), dict(node.vault.entries)) == before
    assert [e.outcome for e in node.audit.entries] == ["OK", "UNCHANGED"]


def test_conflicting_bytes_for_same_instance(node, token, small_corpus):
    _, blob = small_corpus[0]
    node.api_store(token, blob)
    obj = parse_dicom(blob)
    obj.elements.set_text("StudyDescription", "ALTERED")
    with pytest.raises(DigestConflict):
        node.api_store(token, serialize_dicom(obj))


def test_store_rejects_non_dicom_and_sr(node, token, stored):
    with pytest.raises(NotDicom):
        node.api_store(token, b"hello")
    with pytest.raises(NotStructuredReport):
        node.api_store(token, sr_for(node, stored[0]))


@pytest.mark.parametrize("stage", STORE_STAGES)
def test_failed_store_leaves_no_trace(make_node, token, small_corpus, stage):
    node = make_node()
    _, blob = small_corpus[0]
    node.faults = {stage}
    with pytest.raises(InjectedFault):
        node.api_store(token, blob)
    assert node.vault.entries == {} and node.vault.used_bytes == 0
    assert node.catalog.changes == [] and node.catalog.dump() == make_node("EMPTY").catalog.dump().replace(
        "EMPTY", "GB1")
    assert node.identity == {}
    assert [e.outcome for e in node.audit.entries] == ["InjectedFault"]
    node.faults = set()
    assert node.api_store(token, blob).startswith("mg://GB1/")


def test_failed_store_after_restart(make_node, token, small_corpus):
    node = make_node()
    node.faults = {"catalog"}
    with pytest.raises(InjectedFault):
        node.api_store(token, small_corpus[0][1])
    again = make_node()
    assert again.catalog.changes == [] and again.vault.entries == {}


def test_restart_recovers_state(make_node, token, small_corpus):
    node = make_node()
    for _, blob in small_corpus[:3]:
        node.api_store(token, blob)
    again = make_node()
    assert again.catalog.dump() == node.catalog.dump()
    assert again.identity == node.identity
    assert again.vault.entries == node.vault.entries
    assert len(again.audit.entries) == 3


# ------------------------------------------------------------ credentials


def test_token_round_trip_and_tamper(clock):
    token = issue_token(SECRET, "alice", ["b", "a"], clock.now(), 60)
    assert token.vo_set == ("a", "b")
    assert verify_token(SECRET, token.encode(), clock.now()) == token
    forged = FederationToken(token.subject, ("a", "b", "c"), token.issued_at, token.expires_at, token.mac)
    with pytest.raises(InvalidToken):
        verify_token(SECRET, forged.encode(), clock.now())
    with pytest.raises(InvalidToken):
        verify_token("other-secret", token.encode(), clock.now())
    with pytest.raises(InvalidToken):
        verify_token(SECRET, token.encode(), clock.now() + 61)
    with pytest.raises(InvalidToken):
        verify_token(SECRET, "not a token", clock.now())
    with pytest.raises(InvalidToken):
        verify_token(SECRET, None, clock.now())
    future = issue_token(SECRET, "alice", ["a"], clock.now() + 3600)
    with pytest.raises(InvalidToken):
        verify_token(SECRET, future, clock.now())


def test_invalid_token_is_not_audited(node, clock, small_corpus):
    with pytest.raises(InvalidToken):
        node.api_store("garbage", small_corpus[0][1])
    expired = make_token(clock, ["mammo"], ttl=10)
    clock.advance(11)
    with pytest.raises(InvalidToken):
        node.api_query(expired, {})
    assert node.audit.entries == []


def test_vo_gates(make_node, clock, small_corpus):
    node = make_node(vos=("a", "b"))
    only_a, only_b = make_token(clock, ["a"]), make_token(clock, ["b"])
    outsider = make_token(clock, ["c"])
    lfn = node.api_store(only_a, small_corpus[0][1], "a")
    with pytest.raises(Unauthorized):
        node.api_store(only_a, small_corpus[1][1], "b")
    with pytest.raises(Unauthorized):
        node.api_store(outsider, small_corpus[1][1], "c")
    assert node.api_query(only_b, {}).rows == []
    assert node.api_query(only_a, {}).lfns == [lfn]
    with pytest.raises(Unauthorized):
        node.api_resolve(only_b, lfn)
    with pytest.raises(Unauthorized):
        node.api_retrieve_request(only_b, [lfn])
    with pytest.raises(UnknownLfn):
        node.api_resolve(only_a, "mg://GB1/1.2.3")
    pid = node.catalog.facts()[0]["patient.pseudonym_id"]
    with pytest.raises(UnknownPatient):
        node.api_update_patient_meta(only_b, pid, {"patient.sex": "F"})
    with pytest.raises(Unauthorized):
        node.serve_changes(outsider, {})
    # a VO-b peer learns the stream position but sees no VO-a change
    assert [c for b in node.serve_changes(only_b, {}) for c in b.changes] == []


def test_one_audit_entry_per_call(node, token, stored):
    assert node.audit.count("STORE") == len(stored)
    node.api_query(token, {})
    with pytest.raises(UnknownLfn):
        node.api_resolve(token, "mg://GB1/9.9")
    node.api_resolve(token, stored[0])
    node.api_retrieve_request(token, stored[:2])
    assert node.audit.count() == len(stored) + 4
    assert node.audit.count("RESOLVE") == 2 and node.audit.count("RESOLVE", "UnknownLfn") == 1
    assert all(e.actor == "alice" for e in node.audit.entries)
    text = node.audit.text()
    for value in node.forbidden_values():
        assert value not in text
    # the audit file mirrors memory
    assert (node.root / "audit.log").read_text() == text


# ----------------------------------------------------- query and retrieve


def test_local_query_projection(node, token, stored):
    result = node.api_query(token, {"predicate": {"path": "patient.sex", "op": "EQ", "operands": ["F"]}})
    assert result.complete and result.status == {"GB1": "OK"}
    assert set(result.lfns) <= set(stored)
    assert set(result.rows[0]) >= {"lfn", "patient_id", "age", "study_uid"}
    full = node.api_query(token, {"projection": "FULL_ROWS"})
    assert len(full.rows) == len(stored)
    assert {"patient.pseudonym_id", "study.study_uid", "image.lfn"} <= set(full.rows[0])


def test_retrieve_local_entries(node, token, stored):
    entries = node.api_retrieve_request(token, stored)
    assert sorted(e.lfn for e in entries) == sorted(stored)
    assert all(e.state == "LOCAL" and e.case_eat_seconds == 0.0 for e in entries)
    # a case is a study
    studies = {f["image.lfn"]: f["study.study_uid"] for f in node.catalog.facts()}
    by_case = {}
    for e in entries:
        by_case.setdefault(e.case, set()).add(studies[e.lfn])
    assert all(len(s) == 1 for s in by_case.values())


# ---------------------------------------------------------- update / SR


def test_update_meta(node, token, stored):
    pid = node.catalog.facts()[0]["patient.pseudonym_id"]
    ack = node.api_update_patient_meta(token, pid, {"patient.age_at_study": "61", "clinical.hrt_treatment": "yes"})
    assert ack["fields"] == ["clinical.hrt_treatment", "patient.age_at_study"]
    facts = [f for f in node.catalog.facts() if f["patient.pseudonym_id"] == pid]
    assert all(f["patient.age_at_study"] == 61 and f["clinical.hrt_treatment"] is True for f in facts)


@pytest.mark.parametrize(
    "updates",
    [
        {"patient.sex": "X"},
        {"patient.age_at_study": "old"},
        {"patient.age_at_study": 400},
        {"clinical.diet_class": "KETO"},
        {"patient.pseudonym_id": "zz"},
        {"study.description": "x"},
        {},
    ],
)
def test_update_meta_rejects(node, token, stored, updates):
    pid = node.catalog.facts()[0]["patient.pseudonym_id"]
    before = node.catalog.dump()
    with pytest.raises(FieldNotUpdatable):
        node.api_update_patient_meta(token, pid, updates)
    assert node.catalog.dump() == before


def test_update_unknown_patient(node, token, stored):
    with pytest.raises(UnknownPatient):
        node.api_update_patient_meta(token, "0" * 32, {"patient.sex": "F"})


def test_store_sr_links_assessment(node, token, stored):
    sr_lfn = node.api_store_sr(token, sr_for(node, stored[0]))
    assert node.catalog.lfn_entry(sr_lfn).object_kind == "sr"
    fact = next(f for f in node.catalog.facts() if f["image.lfn"] == stored[0])
    assert fact["assessment.finding_type"] == ["MASS"]
    # storing the same SR again is idempotent
    changes = len(node.catalog.changes)
    assert node.api_store_sr(token, sr_for(node, stored[0])) == sr_lfn
    assert len(node.catalog.changes) == changes
    # the same reading under another id is a duplicate
    with pytest.raises(DuplicateAssessment):
        node.api_store_sr(token, sr_for(node, stored[0], n=1, assessment_id="A-other").replace(b".77.1", b".77.9"))


def test_store_sr_dangling(node, token, stored):
    fact = node.catalog.facts()[0]
    assessment = Assessment("A9", fact["study.study_uid"], "dr.who", "20050101T1200", "ws", "FATTY")
    for refs in [("1.2.3.4.5",), ()]:
        obj = build_sr(sr_from_assessment(assessment, refs), sop_uid="1.2.3.4.6", study_uid=fact["study.study_uid"],
                       series_uid="1.2.3.4.7", patient_id=fact["patient.pseudonym_id"])
        with pytest.raises(DanglingReference):
            node.api_store_sr(token, serialize_dicom(obj))
    assert not any(e.object_kind == "sr" for _, (_, e) in node.catalog.lfns.items())
    assert not node.vault.has("mg://GB1/1.2.3.4.6")


def test_store_sr_rejects_image(node, token, small_corpus):
    with pytest.raises(NotStructuredReport):
        node.api_store_sr(token, small_corpus[0][1])


def test_merged_resolve(node, token, stored):
    lfn = stored[0]
    original = node.vault.read(lfn)
    pid = next(f["patient.pseudonym_id"] for f in node.catalog.facts() if f["image.lfn"] == lfn)
    node.api_update_patient_meta(token, pid, {"patient.age_at_study": 70, "patient.sex": "O"})
    sr_lfn = node.api_store_sr(token, sr_for(node, lfn))
    pfns = node.api_resolve(token, lfn, merged=True)
    assert len(pfns) == 2
    base = parse_dicom(node.vault.read(f"interim:{pfns[0].sop_uid}"))
    assert base.get_text("PatientAge") == "070Y" and base.get_text("PatientSex") == "O"
    assert pfns[0].sop_uid == interim_uid(lfn.rsplit("/", 1)[1], 1)
    assert pfns[1].sop_uid == sr_lfn.rsplit("/", 1)[1]
    assert base.elements["PixelData"] == parse_dicom(original).elements["PixelData"]
    # the original is untouched and still served as-is
    assert node.vault.read(lfn) == original
    assert digest_of(original) == node.catalog.lfn_entry(lfn).content_digest
    assert node.api_resolve(token, lfn).sop_uid == lfn.rsplit("/", 1)[1]
    # a second merge gets a fresh instance uid
    assert node.api_resolve(token, lfn, merged=True)[0].sop_uid != pfns[0].sop_uid
    # interim copies are never offered to peers
    with pytest.raises(UnknownLfn):
        node.serve_object(token, pfns[0].sop_uid)


def test_interim_uid_is_valid():
    assert interim_uid("1.2.3", 4) == "1.2.3.99.4"
    long_uid = "1." + "2" * 60
    fallback = interim_uid(long_uid, 1)
    assert fallback.startswith("2.25.") and len(fallback) <= 64
    assert fallback != interim_uid(long_uid, 2)


def test_add_event(node, token, stored):
    pid = node.catalog.facts()[0]["patient.pseudonym_id"]
    assert node.api_add_event(token, MedicalEvent("e1", "DRUG_TREATMENT", pid, "20040101")) == "e1"
    facts = [f for f in node.catalog.facts() if f["patient.pseudonym_id"] == pid]
    assert all(f["event.kind"] == ["DRUG_TREATMENT"] for f in facts)
    with pytest.raises(UnknownPatient):
        node.api_add_event(token, MedicalEvent("e2", "VISIT", "nobody", "20040101"))
    assert node.audit.count("ADD_EVENT") == 2


# ------------------------------------------------------------------- wire


def test_wire_round_trip(node, token, small_corpus):
    api = ApiClient(Local(node), token)
    img, blob = small_corpus[0]
    lfn = api.store(blob)
    assert api.query({}).lfns == [lfn]
    assert api.resolve(lfn).aetitle == "GB1"
    (entry,) = api.retrieve([lfn])
    assert entry.state == "LOCAL"
    pid = api.query({}).rows[0]["patient_id"]
    assert api.update_meta(pid, {"patient.sex": "F"})["fields"] == ["patient.sex"]
    assert api.add_event({"event_id": "e1", "kind": "VISIT", "patient_id": pid}) == "e1"
    sr_lfn = api.store_sr(sr_for(node, lfn))
    assert [p.sop_uid for p in api.resolve(lfn, merged=True)][1] == sr_lfn.rsplit("/", 1)[1]


def test_wire_errors(node, token):
    resp = handle(node, Request("POST", "/api/query", {"Authorization": f"Bearer {token}"}, b"{not json"))
    assert resp.status == 400 and resp.json()["error"] == "InvalidQuery"
    resp = handle(node, Request("POST", "/api/query", {}, b"{}"))
    assert resp.status == 401 and resp.json()["error"] == "InvalidToken"
    resp = handle(node, Request("GET", "/nope", {}))
    assert resp.status == 404
    api = ApiClient(Local(node), token)
    with pytest.raises(UnknownLfn):
        api.resolve("mg://GB1/1.2")
    bad = {"predicate": {"path": "patient.shoe", "op": "EQ", "operands": [1]}}
    resp = handle(node, Request("POST", "/api/query", {"Authorization": f"Bearer {token}"}, json.dumps(bad).encode()))
    assert resp.json() == {"error": "UnknownAttribute", "message": resp.json()["message"], "path": "patient.shoe"}
    assert handle(node, Request("GET", "/health")).json() == {"node_id": "GB1"}


def test_object_endpoint_carries_digest(node, token, stored):
    sop = stored[0].rsplit("/", 1)[1]
    resp = handle(node, Request("GET", f"/objects/{sop}", {"Authorization": f"Bearer {token}"}))
    assert resp.status == 200
    assert resp.headers["X-Content-Digest"] == digest_of(resp.body) == node.catalog.lfn_entry(stored[0]).content_digest


# ----------------------------------------------------------------- config


def test_load_config(tmp_path, monkeypatch):
    (tmp_path / "fed.key").write_text("s3cret\n")
    monkeypatch.setenv("GB_NODE_SECRET", "node-key")
    ini = tmp_path / "gb1.ini"
    ini.write_text(
        "[node]\nnode_id = GB1\nport = 8401\nvault_root = data/gb1\nvos = a, b\n"
        "federation_secret_file = fed.key\nnode_secret_env = GB_NODE_SECRET\ncapacity = 5000\n"
        "[peer.GB2]\nhost = 10.0.0.2\nport = 8402\nvos = b\nrate = 1000\nrtt = 0.2\n"
    )
    config = load_config(ini)
    assert config.node_id == "GB1" and config.vos == ("a", "b") and config.default_vo == "a"
    assert config.vault_root == str(tmp_path / "data/gb1")
    assert config.federation_secret == "s3cret" and config.node_secret == "node-key"
    assert config.capacity == 5000
    (peer,) = config.peers
    assert (peer.node_id, peer.host, peer.port, peer.vos, peer.rate, peer.rtt) == ("GB2", "10.0.0.2", 8402, ("b",), 1000.0, 0.2)
    node = GridBox(config)
    assert set(node.links) == {"GB2"}
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")


def test_config_validation():
    from gridbox.service import NodeConfig, PeerSpec

    with pytest.raises(ValueError):
        NodeConfig("A", ())
    with pytest.raises(ValueError):
        NodeConfig("A", ("v",), peers=(PeerSpec("A"),))
    with pytest.raises(ValueError):
        NodeConfig("A", ("v",), low_water=0.95)
    with pytest.raises(ValueError):
        NodeConfig("A", ("v",), default_vo="w")
