"""Newline-delimited TCP ingest service for streaming device frames.

Protocol: each request line is one frame record, e.g.
``{"session":"22-102-S1007","seq":12,"t_ms":6000,"eda":2051,"psm":310}``.
The service answers every line with one JSON line:
``{"ok":true,"seq":12}`` on success, or
``{"ok":false,"error":"<code>","detail":"..."}`` where the error code is
one of ``malformed``, ``unknown-session``, ``closed-session``,
``ordering``, ``range``, ``throttle``. A rejected line never tears down
the connection.

Each connection is subject to a sliding one-minute rate cap (default 150
frames); frames over the cap are rejected with the ``throttle`` code and
do not consume cap budget.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
import time
from collections import deque
from dataclasses import dataclass

from .acquisition import SessionRecord, SessionStore, frame_to_line, line_to_frame
from .errors import DataError

DEFAULT_RATE_CAP = 150  # frames per minute per connection
RATE_WINDOW_S = 60.0


def _error_code(message: str) -> str:
    if "unknown session" in message:
        return "unknown-session"
    if "closed" in message:
        return "closed-session"
    if message.startswith("seq:"):
        return "ordering"
    if "ADC range" in message or message.startswith("t_ms:"):
        return "range"
    return "malformed"


class _FrameHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server: IngestServer = self.server  # type: ignore[assignment]
        sent_times: deque[float] = deque()
        while True:
            raw = self.rfile.readline()
            if not raw:
                break
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            self._respond(self._process(server, line, sent_times))

    def _process(self, server: "IngestServer", line: str,
                 sent_times: deque[float]) -> dict:
        now = server.clock()
        while sent_times and now - sent_times[0] > RATE_WINDOW_S:
            sent_times.popleft()
        if len(sent_times) >= server.rate_cap:
            return {
                "ok": False,
                "error": "throttle",
                "detail": f"over {server.rate_cap} frames/minute on this connection",
            }
        try:
            frame = line_to_frame(line)
        except DataError as exc:
            return {"ok": False, "error": "malformed", "detail": str(exc)}
        sent_times.append(now)
        try:
            seq = server.store.append_frame(frame.session_id, frame)
        except DataError as exc:
            return {"ok": False, "error": _error_code(str(exc)), "detail": str(exc)}
        return {"ok": True, "seq": seq}

    def _respond(self, obj: dict):
        self.wfile.write((json.dumps(obj, separators=(",", ":")) + "\n").encode())
        self.wfile.flush()


class IngestServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server appending validated frames to a SessionStore."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, store: SessionStore, host: str = "127.0.0.1",
                 port: int = 0, rate_cap: int = DEFAULT_RATE_CAP,
                 clock=time.monotonic):
        self.store = store
        self.rate_cap = rate_cap
        self.clock = clock
        super().__init__((host, port), _FrameHandler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def start(self):
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None


def serve_ingest(store: SessionStore, host: str = "127.0.0.1", port: int = 0,
                 rate_cap: int = DEFAULT_RATE_CAP) -> IngestServer:
    """Start an ingest service in a background thread; returns the handle."""
    return IngestServer(store, host, port, rate_cap).start()


@dataclass
class StreamResult:
    acked: int
    rejected: list[tuple[int, str]]  # (line number, error code)


class IngestClient:
    """Line-oriented client used by the simulator side and by tests."""

    def __init__(self, address: tuple[str, int], timeout: float = 10.0):
        self._sock = socket.create_connection(address, timeout=timeout)
        self._rfile = self._sock.makefile("rb")

    def send_line(self, line: str) -> dict:
        self._sock.sendall((line + "\n").encode("utf-8"))
        reply = self._rfile.readline()
        if not reply:
            raise DataError("connection closed by server")
        return json.loads(reply)

    def send_frame(self, frame) -> dict:
        return self.send_line(frame_to_line(frame))

    def close(self):
        self._rfile.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def stream_session(record: SessionRecord, address: tuple[str, int]) -> StreamResult:
    """Replay a session's frames over the wire; collects acks and rejects."""
    rejected = []
    acked = 0
    with IngestClient(address) as client:
        for i, frame in enumerate(record.frames):
            reply = client.send_frame(frame)
            if reply.get("ok"):
                acked += 1
            else:
                rejected.append((i, reply.get("error", "unknown")))
    return StreamResult(acked=acked, rejected=rejected)
