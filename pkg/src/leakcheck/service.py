"""HTTP front for the review workflow.

Serves the queue and images to the browser UI, records labels append-only, and
exposes the finalized report. Single process; concurrent requests are fine and
label appends are serialized through one lock.
"""

from __future__ import annotations

import json
import mimetypes
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlparse

from .errors import LeakcheckError
from .pipeline import read_queue, read_report
from .registry import DatasetRegistry
from .review import LabelLog, ReviewSession

_STATUS_BY_CODE = {
    "unknown-pair": 404,
    "invalid-label": 400,
    "queue-not-loaded": 409,
    "missing-dataset": 404,
    "missing-input": 404,
    "missing-benchmark": 404,
    "parse-failure": 400,
}

_FALLBACK_PAGE = b"""<!doctype html>
<html><head><title>leakcheck review</title></head>
<body><h1>leakcheck review service</h1>
<p>No UI bundle is installed. Build the frontend and pass --ui-dir, or use the
JSON API directly (/api/queue/next, /api/labels, /api/report).</p>
</body></html>
"""


def load_session(queue_path: Path, labels_path: Path, report_path: Path) -> ReviewSession:
    queue = read_queue(Path(queue_path))
    report = read_report(Path(report_path))
    log = LabelLog(Path(labels_path))
    return ReviewSession(queue, log, report)


class ReviewServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(
        self,
        address: tuple[str, int],
        session: ReviewSession,
        registry: DatasetRegistry | None = None,
        ui_dir: Path | None = None,
    ):
        super().__init__(address, _Handler)
        self.session = session
        self.registry = registry
        self.ui_dir = Path(ui_dir).resolve() if ui_dir else None
        self.mutate_lock = threading.Lock()


class _Handler(BaseHTTPRequestHandler):
    server: ReviewServer

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    # -- helpers ---------------------------------------------------------

    def _send_json(self, obj: dict, status: int = 200) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, code: str, message: str) -> None:
        self._send_json(
            {"error": code, "message": message}, status=_STATUS_BY_CODE.get(code, 500)
        )

    def _send_file(self, path: Path) -> None:
        ctype = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
        data = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _progress(self, reviewer_id: str) -> dict:
        session = self.server.session
        return {
            "labeled": session.labeled_count(reviewer_id),
            "total": len(session.queue),
        }

    def _entry_doc(self, entry) -> dict:
        doc = json.loads(entry.to_json())
        config = self.server.session.pending_report.config
        doc["synth_url"] = f"/images/{config.get('synthetic_id', '')}/{entry.synth_path}"
        doc["real_url"] = f"/images/{config.get('real_id', '')}/{entry.real_path}"
        return doc

    # -- routes ----------------------------------------------------------

    def do_GET(self) -> None:
        url = urlparse(self.path)
        parts = [unquote(p) for p in url.path.split("/") if p]
        try:
            if parts[:3] == ["api", "queue", "next"]:
                query = parse_qs(url.query)
                reviewer = (query.get("reviewer") or [""])[0]
                if not reviewer:
                    return self._send_error_json("invalid-label", "reviewer query parameter required")
                entry = self.server.session.next_pair(reviewer)
                if entry is None:
                    return self._send_json({"done": True, "progress": self._progress(reviewer)})
                doc = self._entry_doc(entry)
                doc["done"] = False
                doc["progress"] = self._progress(reviewer)
                return self._send_json(doc)
            if parts[:2] == ["api", "report"]:
                return self._send_json(self.server.session.report().to_json_dict())
            if parts[:2] == ["api", "pairs"] and len(parts) == 3:
                entry = self.server.session.get_pair(parts[2])
                return self._send_json(self._entry_doc(entry))
            if parts[:1] == ["images"] and len(parts) >= 3:
                return self._serve_image(parts[1], parts[2:])
            return self._serve_static(parts)
        except BrokenPipeError:
            pass
        except LeakcheckError as exc:
            self._send_error_json(exc.code, exc.message)

    def do_POST(self) -> None:
        url = urlparse(self.path)
        if url.path != "/api/labels":
            return self._send_error_json("missing-input", f"no such endpoint: {url.path}")
        try:
            length = int(self.headers.get("Content-Length") or 0)
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError as exc:
                return self._send_error_json("parse-failure", str(exc))
            pair_id = body.get("pair_id")
            reviewer_id = body.get("reviewer_id")
            label = body.get("label")
            if not isinstance(pair_id, str) or not isinstance(reviewer_id, str) or not isinstance(label, str):
                return self._send_error_json(
                    "parse-failure", "pair_id, reviewer_id and label are required strings"
                )
            with self.server.mutate_lock:
                record, appended = self.server.session.submit_label(pair_id, reviewer_id, label)
            return self._send_json(
                {
                    "ok": True,
                    "record_id": record.record_id,
                    "duplicate": not appended,
                    "progress": self._progress(reviewer_id),
                }
            )
        except BrokenPipeError:
            pass
        except LeakcheckError as exc:
            self._send_error_json(exc.code, exc.message)

    # -- file serving ----------------------------------------------------

    def _serve_image(self, dataset_id: str, rel_parts: list[str]) -> None:
        if self.server.registry is None:
            return self._send_error_json("missing-dataset", "no registry configured")
        root = self.server.registry.image_root(dataset_id).resolve()
        target = root.joinpath(*rel_parts).resolve()
        if not target.is_relative_to(root):
            return self._send_error_json("missing-input", "path escapes the dataset root")
        if not target.is_file():
            return self._send_error_json("missing-input", f"no such image: {'/'.join(rel_parts)}")
        self._send_file(target)

    def _serve_static(self, parts: list[str]) -> None:
        ui = self.server.ui_dir
        if ui is None:
            if not parts:
                self.send_response(200)
                self.send_header("Content-Type", "text/html")
                self.send_header("Content-Length", str(len(_FALLBACK_PAGE)))
                self.end_headers()
                self.wfile.write(_FALLBACK_PAGE)
                return
            return self._send_error_json("missing-input", "no UI assets installed")
        target = ui.joinpath(*parts).resolve() if parts else ui / "index.html"
        if not target.is_relative_to(ui):
            return self._send_error_json("missing-input", "path escapes the UI directory")
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            return self._send_error_json("missing-input", f"no such asset: {'/'.join(parts)}")
        self._send_file(target)


def make_server(
    host: str,
    port: int,
    session: ReviewSession,
    registry: DatasetRegistry | None = None,
    ui_dir: Path | None = None,
) -> ReviewServer:
    return ReviewServer((host, port), session, registry=registry, ui_dir=ui_dir)
