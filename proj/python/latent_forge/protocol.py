"""JSON protocol for label proposers and embedders.

Each request is one JSON object; each reply is one JSON object. Over stdio,
messages are newline-delimited; over HTTP, each request is a POST whose body
is the request and whose 200 response body is the reply.

Proposer request:  {"feature_id", "example_audio_paths", "top_n_tags"}
Proposer reply:    {"candidates": [{"text", "confidence"?, "description"?}]}
Embedder request:  {"texts": [...]} or {"audio_paths": [...]}
Embedder reply:    {"embeddings": [[float, ...], ...]}  (unit-norm rows)
Failure reply:     {"error": "message", "retry_after": seconds?}
"""

from __future__ import annotations

import json
import math
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, Sequence

Handler = Callable[[dict], dict]


class ProtocolError(Exception):
    """Raise from a handler to send an error reply instead of crashing."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after

    def reply(self) -> dict:
        out = {"error": str(self)}
        if self.retry_after is not None:
            out["retry_after"] = self.retry_after
        return out


def candidates_reply(labels: Iterable[str | tuple[str, float]]) -> dict:
    cands = []
    for item in labels:
        if isinstance(item, tuple):
            text, conf = item
            if not 0.0 <= conf <= 1.0:
                raise ValueError(f"confidence {conf} outside [0, 1]")
            cands.append({"text": text, "confidence": conf})
        else:
            cands.append({"text": item})
    return {"candidates": cands}


def embeddings_reply(vectors: Sequence[Sequence[float]]) -> dict:
    rows = []
    for v in vectors:
        norm = math.sqrt(sum(float(x) * float(x) for x in v))
        if norm == 0.0:
            raise ValueError("cannot normalize a zero embedding")
        rows.append([float(x) / norm for x in v])
    return {"embeddings": rows}


def _dispatch(handler: Handler, request: object) -> dict:
    if not isinstance(request, dict):
        return {"error": "request must be a JSON object"}
    try:
        return handler(request)
    except ProtocolError as e:
        return e.reply()


def serve_stdio(handler: Handler, stdin=None, stdout=None) -> None:
    """Answer newline-delimited requests until stdin closes."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as e:
            reply = {"error": f"malformed request: {e}"}
        else:
            reply = _dispatch(handler, request)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


def make_http_server(handler: Handler, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """An HTTP server answering POSTs on any path; call serve_forever()."""

    class _Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 (http.server naming)
            length = int(self.headers.get("Content-Length", 0))
            try:
                request = json.loads(self.rfile.read(length) or b"null")
            except json.JSONDecodeError:
                self._send(400, {"error": "malformed request"})
                return
            reply = _dispatch(handler, request)
            if "error" in reply:
                status = 429 if "retry_after" in reply else 500
                self._send(status, reply, reply.get("retry_after"))
            else:
                self._send(200, reply)

        def _send(self, status, body, retry_after=None):
            data = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            if retry_after is not None:
                self.send_header("Retry-After", str(retry_after))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    return ThreadingHTTPServer((host, port), _Handler)


def serve_http_in_background(handler: Handler, host: str = "127.0.0.1", port: int = 0):
    """Start a server thread; returns (server, url_base)."""
    server = make_http_server(handler, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    h, p = server.server_address[:2]
    return server, f"http://{h}:{p}"
