"""HTTP+JSON API over the annotation coordinator.

Endpoints:
  POST /api/annotators           {"name"?}            -> {"annotator": token}
  GET  /api/batches/next?annotator=TOKEN              -> batch payload | 204
  POST /api/batches/{id}         {"annotator","records"} -> gate result
  GET  /api/progress                                  -> coverage summary
  GET  /api/export               (operator token)     -> ndjson snapshot

Annotator-facing payloads never include slot provenance or gold labels;
the export endpoint, which reveals provenance, requires the operator
token via the X-Operator-Token header or a token query parameter.
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .batches import AnnotationCoordinator, ServiceError, export

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 4 * 1024 * 1024


class AnnotationHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int],
                 coordinator: AnnotationCoordinator,
                 operator_token: str | None = None):
        super().__init__(address, _Handler)
        self.coordinator = coordinator
        self.operator_token = operator_token or secrets.token_hex(16)


class _Handler(BaseHTTPRequestHandler):
    server: AnnotationHTTPServer

    # quiet the default stderr-per-request log
    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status: int, message: str) -> None:
        self._send_json(status, {"error": message})

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY_BYTES:
            raise ServiceError("request body too large", status=413)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            parsed = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ServiceError(f"invalid JSON body: {exc}") from exc
        if not isinstance(parsed, dict):
            raise ServiceError("request body must be a JSON object")
        return parsed

    def _operator_authorized(self, query: dict) -> bool:
        supplied = (self.headers.get("X-Operator-Token")
                    or (query.get("token") or [None])[0])
        return supplied == self.server.operator_token

    def do_GET(self) -> None:  # noqa: N802 (stdlib casing)
        url = urlsplit(self.path)
        query = parse_qs(url.query)
        try:
            if url.path == "/api/batches/next":
                tokens = query.get("annotator") or []
                if not tokens:
                    raise ServiceError("missing annotator parameter")
                batch = self.server.coordinator.next_batch(tokens[0])
                if batch is None:
                    self.send_response(204)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                self._send_json(200, batch.payload())
            elif url.path == "/api/progress":
                self._send_json(200, self.server.coordinator.progress())
            elif url.path == "/api/export":
                if not self._operator_authorized(query):
                    raise ServiceError("operator token required", status=403)
                body = export(self.server.coordinator.store).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
            else:
                self._send_error_json(404, f"no route for {url.path}")
        except ServiceError as exc:
            self._send_error_json(exc.status, str(exc))
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("internal error on GET %s", self.path)
            self._send_error_json(500, f"internal error: {exc}")

    def do_POST(self) -> None:  # noqa: N802 (stdlib casing)
        url = urlsplit(self.path)
        try:
            body = self._read_body()
            if url.path == "/api/annotators":
                token = self.server.coordinator.register_annotator(
                    str(body.get("name", "")))
                self._send_json(200, {"annotator": token})
            elif url.path.startswith("/api/batches/"):
                batch_id = url.path[len("/api/batches/"):]
                if not batch_id or "/" in batch_id:
                    raise ServiceError("missing batch id", status=404)
                annotator = body.get("annotator")
                records = body.get("records")
                if not annotator or not isinstance(records, list):
                    raise ServiceError(
                        "body must contain 'annotator' and 'records'")
                gates = self.server.coordinator.submit(batch_id, annotator,
                                                       records)
                self._send_json(200, gates.to_dict())
            else:
                self._send_error_json(404, f"no route for {url.path}")
        except ServiceError as exc:
            self._send_error_json(exc.status, str(exc))
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("internal error on POST %s", self.path)
            self._send_error_json(500, f"internal error: {exc}")


def start_server(coordinator: AnnotationCoordinator, host: str = "127.0.0.1",
                 port: int = 0, operator_token: str | None = None
                 ) -> tuple[AnnotationHTTPServer, threading.Thread]:
    """Start the API in a daemon thread; port 0 picks a free port."""
    server = AnnotationHTTPServer((host, port), coordinator, operator_token)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
