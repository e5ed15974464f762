"""In-process HTTP server speaking the remote denoiser wire format.

Used by tests and by ``texro mock-server``. In ``refine`` mode it echoes
the posted image back as the clean estimate; in ``init`` mode it answers
with the depth map as a gray image.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .denoise import decode_png, encode_png

logger = logging.getLogger(__name__)


@dataclass
class MockBehavior:
    """Fault injection knobs.

    Attributes:
        fail_first: Answer the first ``fail_first`` requests with ``fail_status``.
        fail_status: HTTP status used for injected failures.
        wrong_size: Reply with an image one pixel smaller than requested.
    """

    fail_first: int = 0
    fail_status: int = 500
    wrong_size: bool = False


def respond(payload: dict, wrong_size: bool = False) -> dict:
    """Compute the reply body for one request payload."""
    size = int(payload["size"])
    if payload.get("mode") == "refine" and "init_image_png_b64" in payload:
        img = decode_png(payload["init_image_png_b64"])
    else:
        depth = decode_png(payload["depth_png_b64"]).astype(np.float64) / 65535.0
        gray = np.round(np.clip(0.25 + 0.5 * depth, 0, 1) * 255).astype(np.uint8)
        img = np.repeat(gray[..., None], 3, axis=2)
    if wrong_size:
        img = img[: size - 1, : size - 1]
    return {"image_png_b64": encode_png(np.ascontiguousarray(img))}


@dataclass
class MockServer:
    behavior: MockBehavior = field(default_factory=MockBehavior)
    host: str = "127.0.0.1"
    port: int = 0
    requests: list = field(default_factory=list)
    _httpd: ThreadingHTTPServer | None = field(default=None, repr=False)
    _thread: threading.Thread | None = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def url(self) -> str:
        if self._httpd is None:
            raise RuntimeError("server not started")
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/generate"

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                logger.debug("mock: " + fmt, *args)

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                with server._lock:
                    n = len(server.requests)
                    try:
                        payload = json.loads(raw)
                    except ValueError:
                        payload = None
                    server.requests.append({"mode": (payload or {}).get("mode"), "seed": (payload or {}).get("seed")})
                if n < server.behavior.fail_first:
                    self._reply(server.behavior.fail_status, {"error": "injected failure"})
                    return
                if payload is None or "depth_png_b64" not in payload or "size" not in payload:
                    self._reply(400, {"error": "malformed request"})
                    return
                self._reply(200, respond(payload, server.behavior.wrong_size))

            def _reply(self, status, body):
                data = json.dumps(body).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        return Handler

    def start(self) -> MockServer:
        self._httpd = ThreadingHTTPServer((self.host, self.port), self._handler())
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None

    def serve_forever(self) -> None:
        self._httpd = ThreadingHTTPServer((self.host, self.port), self._handler())
        try:
            self._httpd.serve_forever()
        finally:
            self._httpd.server_close()

    def __enter__(self) -> MockServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
