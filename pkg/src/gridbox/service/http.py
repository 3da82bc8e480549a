"""HTTP/1.1 binding of the wire protocol (stdlib server and client)."""
from __future__ import annotations

import http.client
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from gridbox.errors import PeerUnreachable
from gridbox.service.wire import CHUNK, ApiClient, PeerLink, Request, Response, handle

log = logging.getLogger(__name__)


def _handler_for(node):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _serve(self):
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            req = Request(self.command, self.path, dict(self.headers.items()), body)
            resp = handle(node, req)
            self.send_response(resp.status)
            for key, value in resp.headers.items():
                self.send_header(key, value)
            self.send_header("Content-Length", str(len(resp.body)))
            self.end_headers()
            self.wfile.write(resp.body)

        do_GET = _serve
        do_POST = _serve

        def log_message(self, fmt, *args):
            log.debug("%s %s", self.address_string(), fmt % args)

    return Handler


class NodeServer:
    """Runs a node's HTTP endpoint on a background thread."""

    def __init__(self, node, host: str | None = None, port: int | None = None):
        self.node = node
        host = host if host is not None else node.config.host
        port = port if port is not None else node.config.port
        self.httpd = ThreadingHTTPServer((host, port), _handler_for(node))
        self.httpd.daemon_threads = True
        self.host, self.port = self.httpd.server_address[:2]
        self._thread = None

    def start(self) -> "NodeServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, name=f"http-{self.node.node_id}", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


class HttpTransport:
    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.host, self.port, self.timeout = host, port, timeout

    def _open(self, req: Request, timeout):
        conn = http.client.HTTPConnection(self.host, self.port, timeout=timeout or self.timeout)
        try:
            headers = dict(req.headers)
            headers["Content-Length"] = str(len(req.body))
            conn.request(req.method, req.path, body=req.body, headers=headers)
            return conn, conn.getresponse()
        except OSError as exc:
            conn.close()
            raise PeerUnreachable(f"{self.host}:{self.port}: {exc}") from None

    def send(self, req: Request, timeout=None) -> Response:
        conn, raw = self._open(req, timeout)
        try:
            return Response(raw.status, dict(raw.getheaders()), raw.read())
        except OSError as exc:
            raise PeerUnreachable(f"{self.host}:{self.port}: {exc}") from None
        finally:
            conn.close()

    def stream(self, req: Request):
        conn, raw = self._open(req, None)
        headers = dict(raw.getheaders())
        if raw.status >= 400:
            body = raw.read()
            conn.close()
            return Response(raw.status, headers, body), iter(())

        def chunks():
            try:
                while True:
                    try:
                        piece = raw.read(CHUNK)
                    except OSError as exc:
                        raise PeerUnreachable(str(exc)) from None
                    if not piece:
                        return
                    yield piece
            finally:
                conn.close()

        return Response(raw.status, headers), chunks()


def HttpPeerClient(spec, token_source) -> PeerLink:
    return PeerLink(spec, HttpTransport(spec.host, spec.port), token_source)


def http_api_client(endpoint: str, token: str, timeout: float = 60.0) -> ApiClient:
    """``endpoint`` is ``host:port`` or ``http://host:port``."""
    address = endpoint.split("://", 1)[-1].rstrip("/")
    host, _, port = address.rpartition(":")
    return ApiClient(HttpTransport(host or "127.0.0.1", int(port), timeout), token)
