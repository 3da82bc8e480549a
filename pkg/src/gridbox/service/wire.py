"""Request dispatch and typed clients shared by every transport.

The HTTP server and the simulated network both route through :func:`handle`,
so the bytes a harness captures are the bytes a deployment would send.

Endpoints (bearer ``FederationToken`` in ``Authorization``)::

    POST /api/store                  DICOM bytes        -> {"lfn"}
    POST /api/query                  query document     -> result set
    POST /api/retrieve-request       {"lfns": [...]}    -> {"entries": [...]}
    GET  /api/resolve/{lfn}?merged=  -                  -> {"pfn"} | {"pfns"}
    POST /api/patients/{pid}/meta    {"updates": {...}} -> ack
    POST /api/store-sr               SR bytes           -> {"lfn"}
    POST /api/events                 medical event      -> {"event_id"}
    GET  /peer/changes?cursor=       -                  -> {"batches": [...]}
    GET  /objects/{sop_uid}          -                  -> bytes, X-Content-Digest
    POST /peer/query                 query document     -> result set

Errors come back as ``{"error": <class name>, "message": ...}`` with the
error's HTTP status.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from urllib.parse import parse_qs, quote, unquote, urlsplit

from gridbox.catalog.store import StreamBatch, cursor_to_json
from gridbox.errors import GridBoxError, InvalidQuery, UnknownAttribute, error_by_code
from gridbox.mom.records import MedicalEvent
from gridbox.objectstore.pfn import Pfn
from gridbox.objectstore.store import ObjectStream, RetrieveEntry
from gridbox.objectstore.vault import digest_of
from gridbox.query import ResultSet

log = logging.getLogger(__name__)

CHUNK = 64 * 1024
JSON = {"Content-Type": "application/json"}


@dataclass
class Request:
    method: str
    path: str
    headers: dict = field(default_factory=dict)
    body: bytes = b""

    @property
    def route(self) -> str:
        return urlsplit(self.path).path

    @property
    def params(self) -> dict:
        return {k: v[-1] for k, v in parse_qs(urlsplit(self.path).query).items()}

    @property
    def token(self) -> str | None:
        value = self.headers.get("Authorization") or self.headers.get("authorization") or ""
        return value[len("Bearer "):] if value.startswith("Bearer ") else None

    def json(self):
        try:
            return json.loads(self.body or b"null")
        except ValueError as exc:
            raise InvalidQuery(f"request body is not JSON: {exc}") from None


@dataclass
class Response:
    status: int
    headers: dict = field(default_factory=dict)
    body: bytes = b""

    def json(self):
        return json.loads(self.body)


def _json(data, status: int = 200) -> Response:
    return Response(status, dict(JSON), json.dumps(data, sort_keys=True).encode())


def error_response(exc: Exception) -> Response:
    if isinstance(exc, GridBoxError):
        body = {"error": exc.code, "message": str(exc)}
        if isinstance(exc, UnknownAttribute):
            body["path"] = exc.path
        return _json(body, exc.http_status)
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return _json({"error": "InvalidQuery", "message": f"bad request: {exc}"}, 400)
    log.exception("unhandled error")
    return _json({"error": "GridBoxError", "message": "internal error"}, 500)


def raise_for(resp: Response) -> Response:
    """Re-raise a wire error as the matching exception class."""
    if resp.status < 400:
        return resp
    try:
        body = resp.json()
    except ValueError:
        raise GridBoxError(f"HTTP {resp.status}") from None
    cls = error_by_code(body.get("error", ""))
    if cls is UnknownAttribute:
        raise UnknownAttribute(body.get("path"), body.get("message"))
    raise cls(body.get("message", ""))


def entry_to_json(e: RetrieveEntry) -> dict:
    return asdict(e)


def _route(node, req: Request) -> Response:
    route, method, token = req.route, req.method, req.token
    if route == "/api/store" and method == "POST":
        return _json({"lfn": node.api_store(token, req.body, req.params.get("vo"))})
    if route == "/api/store-sr" and method == "POST":
        return _json({"lfn": node.api_store_sr(token, req.body)})
    if route == "/api/query" and method == "POST":
        return _json(node.api_query(token, req.json()).to_json())
    if route == "/api/retrieve-request" and method == "POST":
        entries = node.api_retrieve_request(token, list(req.json().get("lfns", [])))
        return _json({"entries": [entry_to_json(e) for e in entries]})
    if route.startswith("/api/resolve/") and method == "GET":
        lfn = unquote(route[len("/api/resolve/"):])
        merged = req.params.get("merged", "false").lower() in ("1", "true", "yes")
        result = node.api_resolve(token, lfn, merged)
        if merged:
            return _json({"pfns": [str(p) for p in result]})
        return _json({"pfn": str(result)})
    if route.startswith("/api/patients/") and route.endswith("/meta") and method == "POST":
        pid = unquote(route[len("/api/patients/"):-len("/meta")])
        return _json(node.api_update_patient_meta(token, pid, dict(req.json().get("updates", {}))))
    if route == "/api/events" and method == "POST":
        doc = req.json()
        event = MedicalEvent(
            doc["event_id"], doc["kind"], doc["patient_id"], doc.get("timestamp", ""),
            tuple(tuple(r) for r in doc.get("relations", ())),
        )
        return _json({"event_id": node.api_add_event(token, event)})
    if route == "/peer/changes" and method == "GET":
        cursor = json.loads(req.params.get("cursor") or "{}")
        batches = node.serve_changes(token, cursor)
        return _json({"batches": [b.to_json() for b in batches]})
    if route.startswith("/objects/") and method == "GET":
        data = node.serve_object(token, unquote(route[len("/objects/"):]))
        return Response(200, {"Content-Type": "application/dicom", "X-Content-Digest": digest_of(data)}, data)
    if route == "/peer/query" and method == "POST":
        return _json(node.accept_subquery(token, req.json()).to_json())
    if route == "/health" and method == "GET":
        return _json({"node_id": node.node_id})
    return _json({"error": "GridBoxError", "message": f"no route {method} {route}"}, 404)


def handle(node, req: Request) -> Response:
    try:
        return _route(node, req)
    except Exception as exc:
        return error_response(exc)


# ---------------------------------------------------------------- clients


class PeerLink:
    """Peer-facing calls to one remote node over some transport.

    A transport has ``send(Request, timeout) -> Response`` and
    ``stream(Request) -> (Response headers, chunk iterator)``; both raise
    ``PeerUnreachable`` when the peer cannot be reached.
    """

    def __init__(self, spec, transport, token_source):
        self.spec = spec
        self.node_id = spec.node_id
        self.host = spec.host
        self.port = spec.port
        self.vo_set = frozenset(spec.vos)
        self.transport = transport
        self._token = token_source

    @property
    def rate(self) -> float:
        return self.spec.rate

    @property
    def rtt(self) -> float:
        return self.spec.rtt

    def _auth(self, token=None) -> dict:
        return {"Authorization": f"Bearer {token or self._token()}"}

    def pull(self, cursor: dict) -> list[StreamBatch]:
        arg = quote(json.dumps(cursor_to_json(cursor), sort_keys=True, separators=(",", ":")))
        resp = raise_for(self.transport.send(Request("GET", f"/peer/changes?cursor={arg}", self._auth()), None))
        return [StreamBatch.from_json(b) for b in resp.json()["batches"]]

    def open_object(self, sop_uid: str) -> ObjectStream:
        resp, chunks = self.transport.stream(Request("GET", f"/objects/{quote(sop_uid)}", self._auth()))
        raise_for(resp)
        size = int(resp.headers.get("Content-Length", 0))
        return ObjectStream(resp.headers.get("X-Content-Digest", ""), size, chunks)

    def subquery(self, doc: dict, credentials, timeout=None) -> ResultSet:
        body = json.dumps(doc, sort_keys=True).encode()
        req = Request("POST", "/peer/query", {**self._auth(credentials), **JSON}, body)
        return ResultSet.from_json(raise_for(self.transport.send(req, timeout)).json())


class ApiClient:
    """Workstation-side client for the ``/api`` endpoints."""

    def __init__(self, transport, token: str):
        self.transport = transport
        self.token = token

    def _send(self, method, path, body=b"", content_type="application/json") -> Response:
        headers = {"Authorization": f"Bearer {self.token}", "Content-Type": content_type}
        return raise_for(self.transport.send(Request(method, path, headers, body), None))

    def _post_json(self, path, doc) -> dict:
        return self._send("POST", path, json.dumps(doc, sort_keys=True).encode()).json()

    def store(self, data: bytes, vo: str | None = None) -> str:
        path = "/api/store" + (f"?vo={quote(vo)}" if vo else "")
        return self._send("POST", path, data, "application/dicom").json()["lfn"]

    def store_sr(self, data: bytes) -> str:
        return self._send("POST", "/api/store-sr", data, "application/dicom").json()["lfn"]

    def query(self, doc: dict) -> ResultSet:
        return ResultSet.from_json(self._post_json("/api/query", doc))

    def retrieve(self, lfns) -> list[RetrieveEntry]:
        data = self._post_json("/api/retrieve-request", {"lfns": list(lfns)})
        return [RetrieveEntry(**e) for e in data["entries"]]

    def resolve(self, lfn: str, merged: bool = False):
        data = self._send("GET", f"/api/resolve/{quote(lfn, safe='')}?merged={'true' if merged else 'false'}").json()
        if merged:
            return [Pfn.parse(p) for p in data["pfns"]]
        return Pfn.parse(data["pfn"])

    def update_meta(self, pid: str, updates: dict) -> dict:
        return self._post_json(f"/api/patients/{quote(pid, safe='')}/meta", {"updates": updates})

    def add_event(self, event: dict) -> str:
        return self._post_json("/api/events", event)["event_id"]
