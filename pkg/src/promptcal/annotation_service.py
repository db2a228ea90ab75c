"""REST service publishing annotation batches to human annotators.

The optimization pipeline publishes a batch in-process and blocks; annotators
(the browser UI or plain HTTP clients) read pending batches and submit labels
over REST. Submitted labels are journaled so annotator work survives crashes.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import requests

from .errors import BatchConflict, LabelRejected, UnknownBatch
from .estimation import AnnotationBatch
from .labels import (
    Label,
    LabelSchema,
    label_from_json,
    label_to_json,
    schema_from_json,
    schema_to_json,
)


def _batch_to_json(batch: AnnotationBatch) -> dict:
    return {
        "batch_id": batch.batch_id,
        "status": batch.status,
        "task_description": batch.task_description,
        "label_schema": schema_to_json(batch.label_schema),
        "records": [{"record_id": rid, "text": text} for rid, text in batch.records],
        "submitted_labels": {
            str(rid): label_to_json(label) for rid, label in batch.submitted_labels.items()
        },
    }


def _batch_from_json(data: dict) -> AnnotationBatch:
    schema = schema_from_json(data["label_schema"])
    return AnnotationBatch(
        batch_id=data["batch_id"],
        records=[(int(r["record_id"]), r["text"]) for r in data["records"]],
        label_schema=schema,
        task_description=data.get("task_description", ""),
        status=data.get("status", "pending"),
        submitted_labels={
            int(rid): label_from_json(value, schema)
            for rid, value in data.get("submitted_labels", {}).items()
        },
    )


def _summary(batch: AnnotationBatch) -> dict:
    return {
        "batch_id": batch.batch_id,
        "status": batch.status,
        "task_description": batch.task_description,
        "total": len(batch.records),
        "labeled": len(batch.submitted_labels),
        "schema_kind": batch.label_schema.kind,
    }


class ServiceState:
    """In-process batch store; all transitions serialized under one lock."""

    def __init__(self, journal_path: str | Path | None = None):
        self._lock = threading.Lock()
        self._batches: dict[str, AnnotationBatch] = {}
        self._counter = 0
        self._journal_path = Path(journal_path) if journal_path else None
        if self._journal_path and self._journal_path.exists():
            self._replay_journal()

    # -- journal -----------------------------------------------------------

    def _journal(self, event: dict) -> None:
        if self._journal_path is None:
            return
        with open(self._journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False))
            fh.write("\n")

    def _replay_journal(self) -> None:
        with open(self._journal_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                event = json.loads(line)
                kind = event["event"]
                if kind == "publish":
                    batch = _batch_from_json(event["batch"])
                    self._batches[batch.batch_id] = batch
                    number = int(batch.batch_id.lstrip("b") or 0)
                    self._counter = max(self._counter, number)
                elif kind == "labels":
                    batch = self._batches[event["batch_id"]]
                    for rid, value in event["labels"].items():
                        batch.submitted_labels[int(rid)] = label_from_json(value, batch.label_schema)
                    if len(batch.submitted_labels) == len(batch.records):
                        batch.status = "completed"
                elif kind == "cancel":
                    self._batches[event["batch_id"]].status = "cancelled"

    # -- operations -----------------------------------------------------------

    def publish(self, batch: AnnotationBatch) -> str:
        with self._lock:
            self._counter += 1
            batch.batch_id = f"b{self._counter}"
            batch.status = "pending"
            self._batches[batch.batch_id] = batch
            self._journal({"event": "publish", "batch": _batch_to_json(batch)})
            return batch.batch_id

    def get_pending(self) -> list[dict]:
        with self._lock:
            return [_summary(b) for b in self._batches.values() if b.status == "pending"]

    def get_all(self) -> list[dict]:
        with self._lock:
            return [_summary(b) for b in self._batches.values()]

    def get_batch(self, batch_id: str) -> AnnotationBatch:
        with self._lock:
            batch = self._batches.get(batch_id)
            if batch is None:
                raise UnknownBatch(f"no batch {batch_id!r}")
            return batch

    def submit_labels(self, batch_id: str, labels: dict[int, object]) -> str:
        """Accumulate labels; the batch completes when every record is labeled.

        Re-submitting identical labels is a no-op returning the current
        status, including on completed batches.
        """
        with self._lock:
            batch = self._batches.get(batch_id)
            if batch is None:
                raise UnknownBatch(f"no batch {batch_id!r}")
            record_ids = {rid for rid, _ in batch.records}
            parsed: dict[int, Label] = {}
            for rid, value in labels.items():
                rid = int(rid)
                if rid not in record_ids:
                    raise LabelRejected(f"record {rid} does not belong to batch {batch_id}")
                try:
                    label = label_from_json(value, batch.label_schema)
                except ValueError as exc:
                    raise LabelRejected(f"record {rid}: {exc}") from exc
                if label is None:
                    raise LabelRejected(f"record {rid}: label must not be null")
                parsed[rid] = label
            if batch.status == "cancelled":
                raise BatchConflict(f"batch {batch_id} is cancelled")
            if batch.status == "completed":
                if all(batch.submitted_labels.get(rid) == label for rid, label in parsed.items()):
                    return batch.status
                raise BatchConflict(f"batch {batch_id} is completed and immutable")
            batch.submitted_labels.update(parsed)
            if len(batch.submitted_labels) == len(batch.records):
                batch.status = "completed"
            self._journal(
                {
                    "event": "labels",
                    "batch_id": batch_id,
                    "labels": {str(rid): label_to_json(l) for rid, l in parsed.items()},
                }
            )
            return batch.status

    def cancel(self, batch_id: str) -> str:
        with self._lock:
            batch = self._batches.get(batch_id)
            if batch is None:
                raise UnknownBatch(f"no batch {batch_id!r}")
            if batch.status == "completed":
                raise BatchConflict(f"batch {batch_id} is completed and immutable")
            if batch.status != "cancelled":
                batch.status = "cancelled"
                self._journal({"event": "cancel", "batch_id": batch_id})
            return batch.status


# --- HTTP layer -----------------------------------------------------------------

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".ico": "image/x-icon",
    ".svg": "image/svg+xml",
}


def _make_handler(state: ServiceState, static_dir: Path | None, auth_token: str | None):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args) -> None:  # keep test output quiet
            pass

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _authorized(self) -> bool:
            if auth_token is None:
                return True
            header = self.headers.get("Authorization", "")
            return header == f"Bearer {auth_token}"

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", "0"))
            if length == 0:
                return {}
            return json.loads(self.rfile.read(length).decode("utf-8"))

        def _serve_static(self, path: str) -> None:
            if static_dir is None:
                self._send_json(404, {"error": "no UI bundled"})
                return
            relative = path.lstrip("/") or "index.html"
            target = (static_dir / relative).resolve()
            if not str(target).startswith(str(static_dir.resolve())) or not target.is_file():
                self._send_json(404, {"error": "not found"})
                return
            body = target.read_bytes()
            self.send_response(200)
            content_type = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self) -> None:
            path = self.path.split("?", 1)[0]
            if path == "/api/health":
                self._send_json(200, {"status": "ok"})
                return
            if path.startswith("/api/"):
                if not self._authorized():
                    self._send_json(401, {"error": "unauthorized"})
                    return
                if path == "/api/batches":
                    self._send_json(200, {"batches": state.get_all()})
                    return
                parts = path.split("/")
                if len(parts) == 4 and parts[2] == "batches":
                    try:
                        batch = state.get_batch(parts[3])
                    except UnknownBatch as exc:
                        self._send_json(404, {"error": str(exc)})
                        return
                    self._send_json(200, _batch_to_json(batch))
                    return
                self._send_json(404, {"error": "not found"})
                return
            self._serve_static(path)

        def do_POST(self) -> None:
            path = self.path.split("?", 1)[0]
            if not path.startswith("/api/"):
                self._send_json(404, {"error": "not found"})
                return
            if not self._authorized():
                self._send_json(401, {"error": "unauthorized"})
                return
            parts = path.split("/")
            if len(parts) != 5 or parts[2] != "batches":
                self._send_json(404, {"error": "not found"})
                return
            batch_id, action = parts[3], parts[4]
            try:
                if action == "labels":
                    body = self._read_body()
                    status = state.submit_labels(batch_id, body.get("labels", {}))
                    self._send_json(200, {"batch_id": batch_id, "status": status})
                elif action == "cancel":
                    status = state.cancel(batch_id)
                    self._send_json(200, {"batch_id": batch_id, "status": status})
                else:
                    self._send_json(404, {"error": "not found"})
            except UnknownBatch as exc:
                self._send_json(404, {"error": str(exc)})
            except LabelRejected as exc:
                self._send_json(422, {"error": str(exc)})
            except BatchConflict as exc:
                self._send_json(409, {"error": str(exc)})
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                self._send_json(400, {"error": str(exc)})

    return Handler


class AnnotationServer:
    """Threaded HTTP server wrapping a ServiceState; embeddable in one process."""

    def __init__(
        self,
        state: ServiceState,
        host: str = "127.0.0.1",
        port: int = 0,
        static_dir: str | Path | None = None,
        auth_token: str | None = None,
    ):
        self.state = state
        static = Path(static_dir) if static_dir else None
        self._server = ThreadingHTTPServer((host, port), _make_handler(state, static, auth_token))
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


class AnnotationClient:
    """HTTP client mirroring ServiceState's interface for remote annotators."""

    def __init__(self, base_url: str, auth_token: str | None = None, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._headers = {}
        if auth_token:
            self._headers["Authorization"] = f"Bearer {auth_token}"

    def _raise_for(self, response: requests.Response) -> None:
        detail = ""
        try:
            detail = response.json().get("error", "")
        except ValueError:
            pass
        if response.status_code == 404:
            raise UnknownBatch(detail)
        if response.status_code == 422:
            raise LabelRejected(detail)
        if response.status_code == 409:
            raise BatchConflict(detail)
        response.raise_for_status()

    def health(self) -> bool:
        response = requests.get(f"{self.base_url}/api/health", timeout=self.timeout)
        return response.ok

    def publish(self, batch: AnnotationBatch) -> str:
        raise NotImplementedError(
            "publishing happens in-process; the REST surface is for annotators"
        )

    def get_pending(self) -> list[dict]:
        response = requests.get(
            f"{self.base_url}/api/batches", headers=self._headers, timeout=self.timeout
        )
        self._raise_for(response)
        return [b for b in response.json()["batches"] if b["status"] == "pending"]

    def get_batch(self, batch_id: str) -> AnnotationBatch:
        response = requests.get(
            f"{self.base_url}/api/batches/{batch_id}", headers=self._headers, timeout=self.timeout
        )
        self._raise_for(response)
        return _batch_from_json(response.json())

    def submit_labels(self, batch_id: str, labels: dict) -> str:
        payload = {"labels": {str(rid): value for rid, value in labels.items()}}
        response = requests.post(
            f"{self.base_url}/api/batches/{batch_id}/labels",
            json=payload,
            headers=self._headers,
            timeout=self.timeout,
        )
        self._raise_for(response)
        return response.json()["status"]

    def cancel(self, batch_id: str) -> str:
        response = requests.post(
            f"{self.base_url}/api/batches/{batch_id}/cancel",
            headers=self._headers,
            timeout=self.timeout,
        )
        self._raise_for(response)
        return response.json()["status"]
