"""Local and federated (scatter-gather) query execution."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from gridbox.dicom.sr import SrDocument, sr_from_json, sr_to_json
from gridbox.errors import (
    InvalidQuery,
    InvalidToken,
    PeerUnreachable,
    Unauthorized,
    UnknownAttribute,
)
from gridbox.mom.aom import assessment_from_sr
from gridbox.query.predicate import TRUE, parse_predicate, to_doc
from gridbox.query.similarity import best_score

log = logging.getLogger(__name__)

SCOPES = ("LOCAL_ONLY", "FEDERATED")
PROJECTIONS = ("LFN_SUMMARY", "FULL_ROWS")
OK, TIMEOUT, UNAUTHORIZED = "OK", "TIMEOUT", "UNAUTHORIZED"
SCHEMA_VERSION = 1

SUMMARY_FIELDS = {
    "lfn": "image.lfn",
    "sop_uid": "image.sop_uid",
    "study_uid": "study.study_uid",
    "study_date": "study.study_date",
    "patient_id": "patient.pseudonym_id",
    "sex": "patient.sex",
    "age": "patient.age_at_study",
    "modality": "series.modality",
    "laterality": "image.laterality",
    "view_position": "image.view_position",
    "origin": "patient.origin_node",
}


@dataclass(frozen=True)
class SimilarityClause:
    exemplar: SrDocument | None = None
    lfn: str | None = None
    min_score: float = 0.0

    def __post_init__(self):
        if (self.exemplar is None) == (self.lfn is None):
            raise InvalidQuery("similarity needs exactly one of an inline exemplar or an LFN")
        if not 0.0 <= self.min_score <= 1.0:
            raise InvalidQuery("min_score must lie in [0, 1]")


@dataclass(frozen=True)
class Query:
    predicate: object = TRUE
    similarity: SimilarityClause | None = None
    projection: str = "LFN_SUMMARY"
    scope: str = "LOCAL_ONLY"
    credentials: str | None = None

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise InvalidQuery(f"unknown scope {self.scope!r}")
        if self.projection not in PROJECTIONS:
            raise InvalidQuery(f"unknown projection {self.projection!r}")


def parse_query(doc: dict, credentials: str | None = None) -> Query:
    if not isinstance(doc, dict):
        raise InvalidQuery("query document must be an object")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InvalidQuery(f"unsupported query document version {version!r}")
    similarity = None
    if doc.get("similarity") is not None:
        sim = doc["similarity"]
        exemplar = sr_from_json(sim["exemplar"]) if sim.get("exemplar") is not None else None
        similarity = SimilarityClause(exemplar, sim.get("lfn"), float(sim.get("min_score", 0.0)))
    return Query(
        predicate=parse_predicate(doc.get("predicate")),
        similarity=similarity,
        projection=doc.get("projection", "LFN_SUMMARY"),
        scope=doc.get("scope", "LOCAL_ONLY"),
        credentials=credentials if credentials is not None else doc.get("credentials"),
    )


def query_to_doc(q: Query, include_credentials: bool = False) -> dict:
    doc = {
        "version": SCHEMA_VERSION,
        "scope": q.scope,
        "projection": q.projection,
        "predicate": to_doc(q.predicate),
    }
    if q.similarity is not None:
        doc["similarity"] = {
            "exemplar": sr_to_json(q.similarity.exemplar) if q.similarity.exemplar else None,
            "lfn": q.similarity.lfn,
            "min_score": q.similarity.min_score,
        }
    if include_credentials and q.credentials is not None:
        doc["credentials"] = q.credentials
    return doc


@dataclass
class ResultSet:
    rows: list = field(default_factory=list)
    status: dict = field(default_factory=dict)
    complete: bool = True

    @property
    def lfns(self) -> list[str]:
        return [r["lfn"] for r in self.rows]

    def to_json(self) -> dict:
        return {"rows": self.rows, "status": dict(sorted(self.status.items())), "complete": self.complete}

    @classmethod
    def from_json(cls, data: dict) -> "ResultSet":
        return cls(list(data["rows"]), dict(data["status"]), bool(data["complete"]))


def order_rows(rows: list[dict]) -> list[dict]:
    """Dedup by LFN; order by study date descending, then LFN."""
    seen = {}
    for row in rows:
        seen.setdefault(row["lfn"], row)
    out = sorted(seen.values(), key=lambda r: r["lfn"])
    out.sort(key=lambda r: r.get("study_date") or "", reverse=True)
    return out


def project(fact: dict, projection: str) -> dict:
    if projection == "FULL_ROWS":
        row = {k: v for k, v in fact.items() if not k.startswith("_")}
        row["lfn"] = fact["image.lfn"]
        row["study_date"] = fact["study.study_date"]
        return row
    return {name: fact.get(path) for name, path in SUMMARY_FIELDS.items()}


class QueryEngine:
    """Runs queries for one node.

    ``verify`` maps a credential string to the caller's VO set (raising
    InvalidToken). ``peers`` expose ``node_id``, ``vo_set`` and
    ``subquery(doc, credentials, timeout)``. ``load_exemplar`` turns an SR
    LFN into an :class:`SrDocument`.
    """

    def __init__(self, node_id, catalog, verify, peers=(), load_exemplar=None, timeout=5.0, parallel=True):
        self.node_id = node_id
        self.catalog = catalog
        self.verify = verify
        self.peers = peers
        self.load_exemplar = load_exemplar
        self.timeout = timeout
        self.parallel = parallel
        self.subqueries_sent = 0

    def _exemplar(self, clause: SimilarityClause) -> SrDocument:
        if clause.exemplar is not None:
            return clause.exemplar
        if self.load_exemplar is None:
            raise InvalidQuery("this node cannot load exemplars by LFN")
        return self.load_exemplar(clause.lfn)

    def execute_local(self, q: Query, vo_set=None) -> ResultSet:
        if vo_set is None:
            vo_set = self.verify(q.credentials)
        facts = self.catalog.local_select(q.predicate, vo_set)
        rows = []
        if q.similarity is not None:
            exemplar = assessment_from_sr(self._exemplar(q.similarity))
            for fact in facts:
                score = best_score(exemplar, fact.get("_assessments", ()))
                if score >= q.similarity.min_score:
                    row = project(fact, q.projection)
                    row["similarity"] = score
                    rows.append(row)
        else:
            rows = [project(f, q.projection) for f in facts]
        return ResultSet(order_rows(rows), {self.node_id: OK}, True)

    def _peer_targets(self, vo_set):
        return [p for p in sorted(self.peers, key=lambda p: p.node_id) if frozenset(p.vo_set) & frozenset(vo_set)]

    def _ask(self, peer, doc, credentials):
        try:
            return peer.node_id, peer.subquery(doc, credentials, self.timeout), OK
        except (InvalidToken, Unauthorized):
            return peer.node_id, None, UNAUTHORIZED
        except (PeerUnreachable, TimeoutError, OSError) as exc:
            log.info("subquery to %s failed: %s", peer.node_id, exc)
            return peer.node_id, None, TIMEOUT

    def execute_federated(self, q: Query) -> ResultSet:
        vo_set = self.verify(q.credentials)
        if q.similarity is not None and q.similarity.exemplar is None:
            q = replace(q, similarity=SimilarityClause(self._exemplar(q.similarity), None, q.similarity.min_score))
        sub = replace(q, scope="LOCAL_ONLY")
        doc = query_to_doc(sub)
        local = self.execute_local(sub, vo_set)
        rows, status = list(local.rows), {self.node_id: OK}
        targets = self._peer_targets(vo_set)
        self.subqueries_sent += len(targets)
        if self.parallel and len(targets) > 1:
            with ThreadPoolExecutor(max_workers=len(targets)) as pool:
                answers = list(pool.map(lambda p: self._ask(p, doc, q.credentials), targets))
        else:
            answers = [self._ask(p, doc, q.credentials) for p in targets]
        for node_id, result, state in answers:
            status[node_id] = state
            if result is not None:
                rows.extend(result.rows)
        return ResultSet(order_rows(rows), status, all(s == OK for s in status.values()))

    def execute(self, q: Query) -> ResultSet:
        if q.scope == "FEDERATED":
            return self.execute_federated(q)
        return self.execute_local(q)


__all__ = [
    "Query",
    "QueryEngine",
    "ResultSet",
    "SimilarityClause",
    "UnknownAttribute",
    "parse_query",
    "query_to_doc",
]
