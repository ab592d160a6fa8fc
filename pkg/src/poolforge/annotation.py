"""Human-in-the-loop annotation service.

A small threaded HTTP server that exposes the active query batch to a
labeling client (the bundled web console or anything speaking the API)
and funnels submitted labels back to the orchestrator through one
serialized session object.

API (JSON over UTF-8):

- ``GET /api/status``   -> ``{"round", "phase", "pending_ids"}``
- ``GET /api/batch``    -> ``[{"id", "text"}, ...]`` for the active batch
- ``GET /api/labelset`` -> the label words, index = label integer
- ``POST /api/labels``  with ``[{"id", "label"}, ...]`` ->
  ``{"accepted": [...], "rejected": [{"id", "reason"}, ...]}``

Status codes: 200 on success, 422 for malformed payloads, 409 when no
batch is awaiting labels. Re-submitting a label overwrites the previous
value (logged); the orchestrator unblocks once every batch id has one.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .artifacts import PoolArtifacts
from .errors import AnnotationError

__all__ = ["AnnotationSession", "AnnotationServer", "serve_annotation"]

logger = logging.getLogger(__name__)

_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json; charset=utf-8",
}


class AnnotationSession:
    """Shared state between the HTTP handlers and the orchestrator.

    The orchestrator publishes a batch and blocks in
    :meth:`wait_for_labels`; handler threads record submissions under the
    lock and signal once the batch is fully labeled.
    """

    def __init__(self, label_words: list[str]):
        self.label_words = list(label_words)
        self._lock = threading.Condition()
        self.phase = "idle"
        self.round_index = -1
        self.items: list[dict] = []
        self.submitted: dict[int, int] = {}

    # -- orchestrator side -------------------------------------------------

    def publish(self, round_index: int, ids: list[int],
                artifacts: PoolArtifacts) -> list[dict]:
        if artifacts.texts is None:
            raise AnnotationError("annotation: artifacts carry no texts")
        lookup = artifacts.row_of()
        with self._lock:
            self.round_index = round_index
            self.items = [
                {"id": int(sid), "text": artifacts.texts[lookup[int(sid)]]}
                for sid in ids
            ]
            self.submitted = {}
            self.phase = "labeling"
            self._lock.notify_all()
        return self.items

    def wait_for_labels(self, timeout: float | None = None) -> list[tuple[int, int]]:
        """Block until every published id has a label; return (id, label) pairs."""
        with self._lock:
            done = self._lock.wait_for(
                lambda: len(self.submitted) == len(self.items), timeout=timeout
            )
            if not done:
                raise AnnotationError("annotation: session abandoned (timeout)")
            self.phase = "training"
            return sorted(self.submitted.items())

    def finish(self) -> None:
        with self._lock:
            self.phase = "done"
            self.items = []
            self._lock.notify_all()

    # -- handler side --------------------------------------------------------

    def status(self) -> dict:
        with self._lock:
            batch_ids = {item["id"] for item in self.items}
            pending = sorted(batch_ids - set(self.submitted))
            return {
                "round": self.round_index,
                "phase": self.phase,
                "pending_ids": pending,
            }

    def batch(self) -> list[dict]:
        with self._lock:
            if self.phase != "labeling":
                return []
            return list(self.items)

    def submit(self, labels: list[dict]) -> dict:
        """Record label submissions; returns per-id accept/reject outcome."""
        accepted: list[int] = []
        rejected: list[dict] = []
        with self._lock:
            if self.phase != "labeling":
                raise AnnotationError("annotation: no active batch")
            batch_ids = {item["id"] for item in self.items}
            for entry in labels:
                sid, label = entry["id"], entry["label"]
                if sid not in batch_ids:
                    rejected.append({"id": sid, "reason": "id not in active batch"})
                    continue
                if not isinstance(label, int) or not 0 <= label < len(self.label_words):
                    rejected.append({"id": sid, "reason": "label out of range"})
                    continue
                if sid in self.submitted:
                    logger.info(
                        "annotation: id %d relabeled %d -> %d",
                        sid, self.submitted[sid], label,
                    )
                self.submitted[sid] = label
                accepted.append(sid)
            if len(self.submitted) == len(self.items):
                self._lock.notify_all()
        return {"accepted": sorted(accepted), "rejected": rejected}


def _make_handler(session: AnnotationSession, ui_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            logger.debug("annotation http: " + fmt, *args)

        def _send(self, code: int, payload) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_file(self, path: Path) -> None:
            body = path.read_bytes()
            self.send_response(200)
            self.send_header(
                "Content-Type",
                _STATIC_TYPES.get(path.suffix, "application/octet-stream"),
            )
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path == "/api/status":
                self._send(200, session.status())
            elif self.path == "/api/batch":
                self._send(200, session.batch())
            elif self.path == "/api/labelset":
                self._send(200, session.label_words)
            elif ui_dir is not None:
                name = "index.html" if self.path in ("/", "") else self.path.lstrip("/")
                target = (ui_dir / name).resolve()
                if target.is_file() and ui_dir.resolve() in target.parents:
                    self._send_file(target)
                else:
                    self._send(404, {"error": f"not found: {self.path}"})
            else:
                self._send(404, {"error": f"not found: {self.path}"})

        def do_POST(self):
            if self.path != "/api/labels":
                self._send(404, {"error": f"not found: {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
                if not isinstance(payload, list):
                    raise ValueError("expected a JSON array")
                for entry in payload:
                    if not isinstance(entry, dict) or "id" not in entry or "label" not in entry:
                        raise ValueError("each entry needs id and label")
                    if not isinstance(entry["id"], int):
                        raise ValueError("id must be an integer")
            except (ValueError, json.JSONDecodeError) as exc:
                self._send(422, {"error": f"invalid payload: {exc}"})
                return
            try:
                self._send(200, session.submit(payload))
            except AnnotationError as exc:
                self._send(409, {"error": str(exc)})

    return Handler


class AnnotationServer:
    """Threaded HTTP server wrapper with a clean start/stop lifecycle."""

    def __init__(self, session: AnnotationSession, bind: str = "127.0.0.1:8765",
                 ui_dir: str | Path | None = None):
        host, _, port = bind.partition(":")
        if not port:
            raise AnnotationError(f"bind address {bind!r} must look like host:port")
        self.session = session
        try:
            self._httpd = ThreadingHTTPServer(
                (host, int(port)),
                _make_handler(session, Path(ui_dir) if ui_dir else None),
            )
        except OSError as exc:
            raise AnnotationError(f"annotation: cannot bind {bind}: {exc}") from exc
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "AnnotationServer":
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, name="annotation-http", daemon=True
        )
        self._thread.start()
        logger.info("annotation service listening on %s", self.address)
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve_annotation(artifacts: PoolArtifacts, bind: str,
                     ui_dir: str | Path | None = None) -> AnnotationServer:
    """Start the labeling service for a pool that carries texts."""
    if artifacts.texts is None:
        raise AnnotationError("annotation: artifacts carry no texts; cannot serve")
    session = AnnotationSession(artifacts.label_words)
    return AnnotationServer(session, bind=bind, ui_dir=ui_dir).start()
