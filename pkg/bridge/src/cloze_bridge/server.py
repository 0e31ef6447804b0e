"""Request dispatch and the stdio/TCP serving loops.

Every request gets a response carrying its id; malformed or failing
requests produce typed error responses and the server stays alive
(including on out-of-memory during model calls).  Only one train runs
at a time; a process-wide lock serializes backend access.
"""

from __future__ import annotations

import json
import socket
import sys
import threading

from .protocol import canonical_json


def error_response(rid, err_type: str, message: str, tokens=None) -> dict:
    payload = {"type": err_type, "message": message}
    if tokens:
        payload["tokens"] = tokens
    return {"id": rid, "kind": "error", "error": payload}


def dispatch(backend, request: dict) -> dict:
    rid = request.get("id")
    kind = request.get("kind")
    try:
        if kind == "handshake":
            offenders = backend.check_vocabulary(request.get("candidates", []))
            if offenders:
                return error_response(
                    rid, "vocabulary", "multi-piece verbalizer tokens", offenders
                )
            return {
                "id": rid,
                "kind": "handshake",
                "ok": True,
                "capacity": backend.capacity,
                "info": backend.info(),
            }
        if kind == "score":
            logits = backend.score(
                request["rendered_tokens"],
                request["mask_index"],
                request["candidates"],
            )
            return {"id": rid, "kind": "score", "logits": logits}
        if kind == "train":
            loss = backend.train(
                request.get("config", {}),
                request["candidates"],
                request["examples"],
            )
            return {"id": rid, "kind": "train", "final_loss": loss}
        if kind == "save":
            return {"id": rid, "kind": "save", "handle": backend.save()}
        if kind == "load":
            backend.load(request["handle"])
            return {"id": rid, "kind": "load", "ok": True}
        return error_response(rid, "unknown-kind", f"unknown kind {kind!r}")
    except MemoryError as exc:
        return error_response(rid, "oom", f"out of memory: {exc}")
    except KeyError as exc:
        return error_response(rid, "bad-request", f"missing field {exc}")
    except Exception as exc:
        if type(exc).__name__ == "OutOfMemoryError":
            return error_response(rid, "oom", str(exc))
        return error_response(rid, "internal", f"{type(exc).__name__}: {exc}")


class Session:
    """One line-delimited request/response stream over a shared backend."""

    def __init__(self, backend, lock: threading.Lock | None = None) -> None:
        self.backend = backend
        self.lock = lock or threading.Lock()

    def handle_line(self, line: str) -> str:
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return canonical_json(
                error_response(None, "bad-request", f"not valid JSON: {exc}")
            )
        if not isinstance(request, dict):
            return canonical_json(
                error_response(None, "bad-request", "request must be an object")
            )
        with self.lock:
            return canonical_json(dispatch(self.backend, request))


def serve_stdio(backend) -> None:
    session = Session(backend)
    for raw in sys.stdin:
        line = raw.strip()
        if not line:
            continue
        sys.stdout.write(session.handle_line(line) + "\n")
        sys.stdout.flush()


class TcpServer:
    """Accept loop with one thread per connection; backend shared."""

    def __init__(self, backend, host: str = "127.0.0.1", port: int = 0) -> None:
        self.backend = backend
        self._lock = threading.Lock()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(8)
        self.host, self.port = self._sock.getsockname()[:2]
        self._running = True

    def serve_forever(self) -> None:
        while self._running:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._client, args=(conn,), daemon=True).start()

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def _client(self, conn: socket.socket) -> None:
        session = Session(self.backend, self._lock)
        reader = conn.makefile("rb")
        writer = conn.makefile("wb")
        try:
            for raw in reader:
                line = raw.decode("utf-8").strip()
                if not line:
                    continue
                writer.write((session.handle_line(line) + "\n").encode("utf-8"))
                writer.flush()
        except OSError:
            pass
        finally:
            conn.close()

    def close(self) -> None:
        self._running = False
        self._sock.close()
