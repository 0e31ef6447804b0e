"""In-test TCP server speaking the scorer wire protocol (stub semantics)."""

from __future__ import annotations

import json
import socket
import threading

from clozetag.bridge import StubScorer, canonical_json


class StubTcpServer:
    """One StubScorer session per connection; runs in a daemon thread."""

    def __init__(self, scorer_factory=StubScorer):
        self.scorer_factory = scorer_factory
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(4)
        self.port = self._sock.getsockname()[1]
        self._running = True
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    @property
    def address(self) -> str:
        return f"127.0.0.1:{self.port}"

    def _serve(self) -> None:
        while self._running:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(
                target=self._handle, args=(conn,), daemon=True
            ).start()

    def _handle(self, conn: socket.socket) -> None:
        scorer = self.scorer_factory()
        reader = conn.makefile("rb")
        writer = conn.makefile("wb")
        try:
            for raw in reader:
                request = json.loads(raw.decode("utf-8"))
                response = scorer.handle_request(request)
                writer.write((canonical_json(response) + "\n").encode("utf-8"))
                writer.flush()
        except (OSError, json.JSONDecodeError):
            pass
        finally:
            conn.close()

    def close(self) -> None:
        self._running = False
        self._sock.close()
