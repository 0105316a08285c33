"""HTTP/JSON binding for simulated services and the trust engine.

Service endpoint::

    GET /items/latest?limit=L  ->  200 [{"id": str, "produced_at": int, "value": float}, ...]
                                   newest first, flushed items only
                                   503 when the request is denied
                                   connection closed without a response on failure

Trust endpoint::

    GET /trust/ranking?alpha=A&beta=B  ->  200 trust report (see tmm.trust_report)
                                           400 on invalid weights, 503 before any factor exists

Only item ids, production timestamps and values cross the wire; insertion
times and rates never do.
"""

from __future__ import annotations

import http.client
import json
import logging
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, Optional
from urllib.parse import parse_qs, urlsplit

from .errors import BindFailure, EmptyRanking, InvalidInput
from .sim import DataItem, DataQuery, Outcome, Response, SimulatedService, handle_request
from .tmm import TrustEngine, parse_weights, trust_report

logger = logging.getLogger(__name__)


def wire_item(item: DataItem) -> dict:
    return {"id": item.item_id, "produced_at": int(round(item.produced_at)), "value": item.payload}


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, format, *args):
        logger.debug("%s %s", self.address_string(), format % args)

    def _send_json(self, status: int, body) -> None:
        payload = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


class _Endpoint:
    def __init__(self, handler_cls, host: str, port: int):
        try:
            self.server = ThreadingHTTPServer((host, port), handler_cls)
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
        self.server.daemon_threads = True
        self._thread = threading.Thread(target=self.server.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_service(service: SimulatedService, host: str = "127.0.0.1", port: int = 0) -> _Endpoint:
    """Expose ``service`` at ``http://host:port/items/latest``; port 0 picks a free one."""

    class Handler(_Handler):
        def do_GET(self):
            parts = urlsplit(self.path)
            if parts.path != "/items/latest":
                self._send_json(404, {"error": "not found"})
                return
            query = parse_qs(parts.query)
            try:
                limit = int(query.get("limit", ["10"])[0])
                if limit < 0:
                    raise ValueError
            except ValueError:
                self._send_json(400, {"error": "limit must be a non-negative integer"})
                return
            response = handle_request(service, DataQuery(limit), at=service.clock.now)
            if response.outcome is Outcome.DENIED:
                self._send_json(503, {"error": "service unavailable"})
                return
            time.sleep(response.latency / 1000.0)
            if response.outcome is Outcome.FAILED:
                self.close_connection = True
                try:
                    self.connection.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                return
            self._send_json(200, [wire_item(i) for i in response.items])

    return _Endpoint(Handler, host, port)


def serve_trust_api(
    engine: TrustEngine,
    service_ids: Iterable[str],
    clock,
    host: str = "127.0.0.1",
    port: int = 0,
) -> _Endpoint:
    service_ids = list(service_ids)

    class Handler(_Handler):
        def do_GET(self):
            parts = urlsplit(self.path)
            if parts.path != "/trust/ranking":
                self._send_json(404, {"error": "not found"})
                return
            query = parse_qs(parts.query)
            if "alpha" not in query or "beta" not in query:
                self._send_json(400, {"error": "alpha and beta are required"})
                return
            try:
                weights = parse_weights(query["alpha"][0], query["beta"][0])
            except InvalidInput as exc:
                self._send_json(400, {"error": str(exc)})
                return
            try:
                ranking = engine.rank_services(service_ids, weights, clock.now)
            except EmptyRanking as exc:
                self._send_json(503, {"error": "no trust factors available yet",
                                      "omitted": [{"service_id": s, "reason": r} for s, r in exc.omitted]})
                return
            self._send_json(200, trust_report(ranking))

    return _Endpoint(Handler, host, port)


class HttpTransport:
    """Client side of the service endpoint, producing :class:`Response` values.

    Latency is the measured wall round trip. A refused connection or a 503
    is a denial; a dropped connection or a timeout is a failure after accept.
    """

    def __init__(self, urls: dict, clock, limit: int = 10, timeouts_ms: Optional[dict] = None):
        self.urls = dict(urls)
        self.clock = clock
        self.limit = limit
        self.timeouts_ms = timeouts_ms or {}

    def __call__(self, service_id: str) -> Response:
        parts = urlsplit(self.urls[service_id])
        timeout = self.timeouts_ms.get(service_id)
        requested_at = self.clock.now
        started = time.perf_counter()

        def elapsed_ms() -> float:
            return (time.perf_counter() - started) * 1000.0

        conn = http.client.HTTPConnection(parts.hostname, parts.port,
                                          timeout=None if timeout is None else timeout / 1000.0)
        try:
            try:
                conn.connect()
            except OSError:
                return Response(Outcome.DENIED, requested_at)
            try:
                conn.request("GET", f"/items/latest?limit={self.limit}")
                resp = conn.getresponse()
                body = resp.read()
            except (OSError, http.client.HTTPException):
                return Response(Outcome.FAILED, requested_at, elapsed_ms())
            latency = elapsed_ms()
            if resp.status == 503:
                return Response(Outcome.DENIED, requested_at)
            if resp.status != 200:
                return Response(Outcome.FAILED, requested_at, latency)
            try:
                items = tuple(
                    DataItem(str(w["id"]), float(w["produced_at"]), float(w["value"]))
                    for w in json.loads(body)
                )
            except (ValueError, KeyError, TypeError):
                return Response(Outcome.FAILED, requested_at, latency)
            return Response(Outcome.DATA, requested_at, latency, items)
        finally:
            conn.close()


def in_process_transport(services: dict, clock, limit: int = 10) -> Callable[[str], Response]:
    def transport(service_id: str) -> Response:
        return handle_request(services[service_id], DataQuery(limit), at=clock.now)

    return transport
