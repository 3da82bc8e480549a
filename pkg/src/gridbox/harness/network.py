"""In-process federation on a simulated clock.

Every inter-node request is routed through :func:`gridbox.service.wire.handle`
on the target node and recorded byte for byte. Links carry a rate (bytes/s)
and a round-trip time. An object transfer of ``n`` bytes takes
``rtt + n / rate`` simulated seconds, charged chunk by chunk as the receiver
consumes it. Links can be partitioned and transfers corrupted.
"""
from __future__ import annotations

import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from gridbox.clock import SimClock
from gridbox.errors import PeerUnreachable
from gridbox.objectstore.runner import DeferredRunner
from gridbox.service import GridBox, NodeConfig, PeerSpec, issue_token
from gridbox.service.wire import CHUNK, ApiClient, PeerLink, Request, Response, handle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    rate: float = 1_250_000.0
    rtt: float = 0.05


@dataclass
class Capture:
    src: str
    dst: str
    request: bytes
    response: bytes


def _wire_bytes(req: Request) -> bytes:
    head = f"{req.method} {req.path}\n" + "".join(f"{k}: {v}\n" for k, v in sorted(req.headers.items()))
    return head.encode() + b"\n" + req.body


@dataclass
class NetStats:
    requests: int = 0
    transfers: dict = field(default_factory=dict)  # (src, dst) -> objects moved
    bytes_moved: int = 0


class SimTransport:
    """Carries requests from ``src`` to ``dst`` across the simulated network."""

    def __init__(self, net: "SimNetwork", src: str, dst: str):
        self.net, self.src, self.dst = net, src, dst

    def _check(self, timeout=None):
        if not self.net.reachable(self.src, self.dst):
            if timeout:
                self.net.clock.advance(timeout)  # the caller waited out its deadline
            raise PeerUnreachable(f"{self.dst} is partitioned from {self.src}")

    def send(self, req: Request, timeout=None) -> Response:
        self._check(timeout)
        link = self.net.link(self.src, self.dst)
        self.net.clock.advance(link.rtt)
        resp = handle(self.net.nodes[self.dst], req)
        self.net.record(self.src, self.dst, req, resp)
        return resp

    def stream(self, req: Request):
        self._check()
        link = self.net.link(self.src, self.dst)
        resp = handle(self.net.nodes[self.dst], req)
        body = resp.body
        if resp.status < 400:
            sop_uid = req.route.rsplit("/", 1)[-1]
            if sop_uid in self.net.corrupt:
                self.net.corrupt.discard(sop_uid)
                flipped = bytearray(body)
                flipped[-1] ^= 0xFF
                body = bytes(flipped)
        self.net.record(self.src, self.dst, req, Response(resp.status, resp.headers, body))
        if resp.status >= 400:
            self.net.clock.advance(link.rtt)
            return resp, iter(())
        headers = dict(resp.headers)
        headers["Content-Length"] = str(len(body))
        key = (self.dst, self.src)
        self.net.stats.transfers[key] = self.net.stats.transfers.get(key, 0) + 1
        self.net.stats.bytes_moved += len(body)

        self.net.clock.advance(link.rtt)  # request out, first byte back

        def chunks():
            for pos in range(0, len(body), self.net.chunk):
                self._check()
                piece = body[pos : pos + self.net.chunk]
                self.net.clock.advance(len(piece) / link.rate)
                yield piece

        return Response(resp.status, headers), chunks()


class SimNetwork:
    def __init__(self, root=None, clock=None, chunk: int = CHUNK, federation_secret: str = "federation-secret"):
        self.root = Path(root or tempfile.mkdtemp(prefix="gridbox-sim-"))
        self.clock = clock or SimClock()
        self.chunk = chunk
        self.federation_secret = federation_secret
        self.nodes: dict[str, GridBox] = {}
        self.links: dict[frozenset, Link] = {}
        self.isolated: set[str] = set()
        self.cut: set[frozenset] = set()
        self.corrupt: set[str] = set()
        self.traffic: list[Capture] = []
        self.stats = NetStats()
        self._vos: dict[str, tuple] = {}

    # -------------------------------------------------------------- topology

    def add_link(self, a: str, b: str, rate: float = 1_250_000.0, rtt: float = 0.05) -> Link:
        link = Link(a, b, rate, rtt)
        self.links[frozenset((a, b))] = link
        return link

    def link(self, a: str, b: str) -> Link:
        return self.links[frozenset((a, b))]

    def neighbours(self, node_id: str) -> list[str]:
        return sorted(next(iter(k - {node_id})) for k in self.links if node_id in k and len(k) == 2)

    def reachable(self, a: str, b: str) -> bool:
        return a not in self.isolated and b not in self.isolated and frozenset((a, b)) not in self.cut

    def partition(self, node_id: str) -> None:
        self.isolated.add(node_id)

    def cut_link(self, a: str, b: str) -> None:
        self.cut.add(frozenset((a, b)))

    def heal(self) -> None:
        self.isolated.clear()
        self.cut.clear()

    # ----------------------------------------------------------------- nodes

    def declare(self, node_id: str, vos, **config) -> None:
        """Register a node's VOs before links are final; call :meth:`start` after."""
        self._vos[node_id] = (tuple(vos), config)

    def start(self) -> dict[str, GridBox]:
        for node_id in sorted(self._vos):
            if node_id not in self.nodes:
                self._start_one(node_id)
        return self.nodes

    def _token_source(self, node_id: str):
        return lambda: self.nodes[node_id].peer_token()

    def add_node(self, node_id: str, vos, **config) -> GridBox:
        """Declare and start one node; its peers are the declared neighbours."""
        self.declare(node_id, vos, **config)
        self._start_one(node_id)
        return self.nodes[node_id]

    def _start_one(self, node_id: str) -> None:
        vos, extra = self._vos[node_id]
        for other in self.neighbours(node_id):
            node = self.nodes.get(other)
            if node is not None and node_id not in node.links:
                raise ValueError(f"{other} was started before its neighbour {node_id}; declare both first")
        peers = []
        for other in self.neighbours(node_id):
            if other not in self._vos:
                continue
            link = self.link(node_id, other)
            peers.append(PeerSpec(other, f"{other.lower()}.sim", 104, self._vos[other][0], link.rate, link.rtt))
        config = NodeConfig(
            node_id=node_id, vos=vos, vault_root=str(self.root / node_id), host=f"{node_id.lower()}.sim",
            port=104, peers=tuple(peers), federation_secret=self.federation_secret,
            node_secret=f"node-secret-{node_id}", **extra,
        )
        links = {p.node_id: PeerLink(p, SimTransport(self, node_id, p.node_id), self._token_source(node_id))
                 for p in peers}
        node = GridBox(config, clock=self.clock, runner=DeferredRunner(), links=links)
        node.engine.parallel = False
        self.nodes[node_id] = node

    # ---------------------------------------------------------------- driving

    def token(self, subject: str, vos, ttl: float = 86400.0) -> str:
        return issue_token(self.federation_secret, subject, vos, self.clock.now(), ttl).encode()

    def client(self, node_id: str, token: str) -> ApiClient:
        """Workstation client talking to ``node_id`` (not recorded as inter-node traffic)."""
        return ApiClient(_LocalTransport(self.nodes[node_id]), token)

    def record(self, src: str, dst: str, req: Request, resp: Response) -> None:
        self.stats.requests += 1
        self.traffic.append(Capture(src, dst, _wire_bytes(req), resp.body))

    def sync_round(self) -> int:
        """Every node pulls once from each reachable neighbour, in node order."""
        applied = 0
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            applied += node.sync_once()
        return applied

    def sync_until_quiet(self, max_rounds: int = 20) -> int:
        """Rounds needed until a round applies nothing (the quiet round not counted)."""
        for rounds in range(max_rounds + 1):
            if self.sync_round() == 0:
                return rounds
        return max_rounds

    def run_transfers(self) -> int:
        return sum(node.store.runner.run_pending() for node in self.nodes.values())

    def dumps(self, vo_set) -> dict[str, str]:
        return {nid: node.catalog.dump(vo_set) for nid, node in sorted(self.nodes.items())}

    def scan(self, needles) -> dict[str, int]:
        """Occurrences of each needle anywhere in captured inter-node traffic."""
        blobs = [c.request + b"\n" + c.response for c in self.traffic]
        out = {}
        for needle in needles:
            if not needle:
                continue
            raw = needle.encode("latin-1")
            out[needle] = sum(b.count(raw) for b in blobs)
        return out


class _LocalTransport:
    def __init__(self, node):
        self.node = node

    def send(self, req: Request, timeout=None) -> Response:
        return handle(self.node, req)


__all__ = ["Capture", "Link", "SimNetwork", "SimTransport"]
