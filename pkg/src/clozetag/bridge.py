"""Client side of the external-scorer wire protocol, plus the stub
reference semantics both endpoints must reproduce bit-exactly.

Framing: one JSON object per line (LF), UTF-8, over stdio or TCP.
Canonical encoding for transcripts is ``json.dumps(obj, sort_keys=True,
separators=(",", ":"))``.

Request kinds and responses (every request carries a client-assigned
``id`` echoed back; unknown kinds get a typed error, never silence):

* ``handshake``: ``{"id", "kind": "handshake", "protocol": 1,
  "candidates": [...]}`` -> ``{"id", "kind": "handshake", "ok": true,
  "capacity": n, "info": {...}}`` or an ``error`` response of type
  ``"vocabulary"`` listing the offending multi-piece tokens.
* ``score``: ``{"id", "kind": "score", "rendered_tokens": [...],
  "mask_index": i, "candidates": [...], "target_position":
  {"sentence_id": s, "token_index": t}}`` -> ``{"id", "kind": "score",
  "logits": [...]}`` (raw logits, one per candidate, candidate order).
* ``train``: ``{"id", "kind": "train", "config": {...}, "candidates":
  [...], "examples": [{"rendered_tokens", "mask_index",
  "target_position", "gold": label_index | "soft": [...]}]}`` ->
  ``{"id", "kind": "train", "final_loss": x}``.  ``gold`` examples use
  cross-entropy; ``soft`` examples carry a target distribution in
  candidate order (distillation).
* ``save``: -> ``{"id", "kind": "save", "handle": str}``;
  ``load``: ``{"handle": str}`` -> ``{"id", "kind": "load", "ok": true}``.

Stub semantics (protocol conformance mode, no model weights), pinned so
independent implementations replay the same transcripts byte-for-byte:

* Base logit of a candidate: ``h = blake2b(payload, digest_size=8)``
  little-endian over ``"\\x1f".join(rendered_tokens) + "\\x1e" +
  str(mask_index) + "\\x1e" + candidate`` (UTF-8); the logit is
  ``(h >> 11) * 2.0**-53 * 8.0 - 4.0`` (exact in float64).
* ``train`` adds ``0.25`` to a per-token bias for the gold candidate of
  every example, in example order (soft examples add ``0.25 * soft[c]``
  per candidate); scores add the bias.  ``final_loss`` is the mean over
  examples, in order, of the per-example cross-entropy computed after
  all updates with max-subtracted softmax.
* Stub vocabulary: a verbalizer token is single-piece iff it matches
  ``[A-Za-z]+`` and has at most 16 characters.
* ``save`` returns the canonical JSON of the bias table as its handle;
  ``load`` replaces the table with the handle's content.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import socket
import subprocess
from typing import Sequence

import numpy as np

from .pvp import ClozeExample
from .scoring import ScoreRequest, TrainConfig

PROTOCOL_VERSION = 1
BRIDGE_ENV_VAR = "CLOZETAG_BRIDGE"

_STUB_TOKEN = re.compile(r"[A-Za-z]{1,16}")


class BridgeError(RuntimeError):
    pass


class BridgeConnectionError(BridgeError):
    """Bridge endpoint unreachable or the transport died."""


class BridgeProtocolError(BridgeError):
    """Endpoint answered, but not with what the protocol requires."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def stub_base_logit(rendered_tokens: Sequence[str], mask_index: int, candidate: str) -> float:
    payload = (
        "\x1f".join(rendered_tokens) + "\x1e" + str(mask_index) + "\x1e" + candidate
    )
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return (h >> 11) * 2.0**-53 * 8.0 - 4.0


class StubScorer:
    """Reference implementation of the stub semantics above.

    Used to generate golden transcripts and by in-test servers; the
    external bridge reimplements the same behavior behind ``--stub``.
    """

    def __init__(self) -> None:
        self.bias: dict[str, float] = {}

    def check_vocabulary(self, tokens: Sequence[str]) -> list[str]:
        return [tok for tok in tokens if not _STUB_TOKEN.fullmatch(tok)]

    def logits(
        self, rendered_tokens: Sequence[str], mask_index: int, candidates: Sequence[str]
    ) -> list[float]:
        return [
            stub_base_logit(rendered_tokens, mask_index, cand)
            + self.bias.get(cand, 0.0)
            for cand in candidates
        ]

    def train(self, candidates: Sequence[str], examples: Sequence[dict]) -> float:
        for ex in examples:
            if "gold" in ex:
                gold = candidates[ex["gold"]]
                self.bias[gold] = self.bias.get(gold, 0.0) + 0.25
            else:
                for cand, weight in zip(candidates, ex["soft"]):
                    self.bias[cand] = self.bias.get(cand, 0.0) + 0.25 * weight
        total = 0.0
        for ex in examples:
            logits = self.logits(ex["rendered_tokens"], ex["mask_index"], candidates)
            m = max(logits)
            log_denom = math.log(sum(math.exp(v - m) for v in logits))
            logp = [v - m - log_denom for v in logits]
            if "gold" in ex:
                total += -logp[ex["gold"]]
            else:
                total += -sum(w * lp for w, lp in zip(ex["soft"], logp))
        return total / len(examples)

    def save(self) -> str:
        return canonical_json(self.bias)

    def load(self, handle: str) -> None:
        self.bias = {str(k): float(v) for k, v in json.loads(handle).items()}

    def handle_request(self, request: dict) -> dict:
        """Map one protocol request to its response (stub semantics)."""
        rid = request.get("id")
        kind = request.get("kind")
        if kind == "handshake":
            offenders = self.check_vocabulary(request.get("candidates", []))
            if offenders:
                return {
                    "id": rid,
                    "kind": "error",
                    "error": {
                        "type": "vocabulary",
                        "message": "multi-piece verbalizer tokens",
                        "tokens": offenders,
                    },
                }
            return {
                "id": rid,
                "kind": "handshake",
                "ok": True,
                "capacity": 1,
                "info": {"mode": "stub", "protocol": PROTOCOL_VERSION},
            }
        if kind == "score":
            return {
                "id": rid,
                "kind": "score",
                "logits": self.logits(
                    request["rendered_tokens"],
                    request["mask_index"],
                    request["candidates"],
                ),
            }
        if kind == "train":
            loss = self.train(request["candidates"], request["examples"])
            return {"id": rid, "kind": "train", "final_loss": loss}
        if kind == "save":
            return {"id": rid, "kind": "save", "handle": self.save()}
        if kind == "load":
            self.load(request["handle"])
            return {"id": rid, "kind": "load", "ok": True}
        return {
            "id": rid,
            "kind": "error",
            "error": {"type": "unknown-kind", "message": f"unknown kind {kind!r}"},
        }


def example_payload(example: ClozeExample) -> dict:
    return {
        "rendered_tokens": list(example.rendered_tokens),
        "mask_index": example.mask_index,
        "target_position": {
            "sentence_id": example.sentence_id,
            "token_index": example.token_index,
        },
    }


class _LineTransport:
    """Newline-delimited JSON over a socket or subprocess pipes."""

    def __init__(self, reader, writer, closer) -> None:
        self._reader = reader
        self._writer = writer
        self._closer = closer

    def request(self, payload: dict) -> dict:
        line = canonical_json(payload) + "\n"
        try:
            self._writer.write(line.encode("utf-8"))
            self._writer.flush()
            answer = self._reader.readline()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeConnectionError(f"bridge transport failed: {exc}") from exc
        if not answer:
            raise BridgeConnectionError("bridge closed the connection")
        try:
            return json.loads(answer.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"bridge sent non-JSON line: {answer!r}") from exc

    def close(self) -> None:
        self._closer()


def tcp_transport(host: str, port: int) -> _LineTransport:
    try:
        sock = socket.create_connection((host, port), timeout=30.0)
    except OSError as exc:
        raise BridgeConnectionError(
            f"cannot connect to scorer bridge at {host}:{port}: {exc}"
        ) from exc
    reader = sock.makefile("rb")
    writer = sock.makefile("wb")

    def close() -> None:
        reader.close()
        writer.close()
        sock.close()

    return _LineTransport(reader, writer, close)


def stdio_transport(command: Sequence[str]) -> _LineTransport:
    try:
        proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
    except OSError as exc:
        raise BridgeConnectionError(f"cannot spawn bridge {command!r}: {exc}") from exc

    def close() -> None:
        if proc.stdin:
            proc.stdin.close()
        proc.wait(timeout=10)

    return _LineTransport(proc.stdout, proc.stdin, close)


def parse_bridge_address(spec: str) -> tuple[str, int]:
    """Accept ``host:port`` or bare ``:port``; fall back to the
    CLOZETAG_BRIDGE environment variable when spec is empty."""
    if not spec:
        spec = os.environ.get(BRIDGE_ENV_VAR, "")
    if not spec:
        raise BridgeConnectionError(
            f"no bridge address given and {BRIDGE_ENV_VAR} is unset"
        )
    host, _, port = spec.rpartition(":")
    if not port.isdigit():
        raise BridgeConnectionError(f"bad bridge address {spec!r} (want host:port)")
    return host or "127.0.0.1", int(port)


class BridgeScorer:
    """Scorer backed by an external process speaking the wire protocol."""

    def __init__(
        self,
        transport: _LineTransport,
        labels: Sequence[str],
        candidates: Sequence[str],
    ) -> None:
        self._transport = transport
        self.labels = tuple(labels)
        self.candidates = tuple(candidates)
        self._next_id = 0
        self.capacity = 1
        self.server_info: dict = {}
        self._handshake()

    @classmethod
    def connect_tcp(
        cls, address: str, labels: Sequence[str], candidates: Sequence[str]
    ) -> "BridgeScorer":
        host, port = parse_bridge_address(address)
        return cls(tcp_transport(host, port), labels, candidates)

    @classmethod
    def spawn_stdio(
        cls, command: Sequence[str], labels: Sequence[str], candidates: Sequence[str]
    ) -> "BridgeScorer":
        return cls(stdio_transport(command), labels, candidates)

    def close(self) -> None:
        self._transport.close()

    def _call(self, payload: dict) -> dict:
        self._next_id += 1
        payload = {"id": self._next_id, **payload}
        response = self._transport.request(payload)
        if response.get("id") != self._next_id:
            raise BridgeProtocolError(
                f"response id {response.get('id')!r} does not echo request id "
                f"{self._next_id}"
            )
        if response.get("kind") == "error":
            err = response.get("error", {})
            raise BridgeProtocolError(
                f"bridge error [{err.get('type')}]: {err.get('message')}"
                + (f" {err.get('tokens')}" if err.get("tokens") else "")
            )
        return response

    def _handshake(self) -> None:
        response = self._call(
            {
                "kind": "handshake",
                "protocol": PROTOCOL_VERSION,
                "candidates": list(self.candidates),
            }
        )
        if response.get("kind") != "handshake" or not response.get("ok"):
            raise BridgeProtocolError(f"handshake rejected: {response}")
        self.capacity = int(response.get("capacity", 1))
        self.server_info = dict(response.get("info", {}))

    def score(self, request: ScoreRequest) -> np.ndarray:
        if tuple(request.candidates) != self.candidates:
            raise BridgeProtocolError(
                "request candidates do not match the handshake candidates"
            )
        return self.score_batch([request.example])[0]

    def score_batch(self, examples: Sequence[ClozeExample]) -> np.ndarray:
        out = np.empty((len(examples), len(self.candidates)), dtype=np.float64)
        for row, example in enumerate(examples):
            response = self._call(
                {
                    "kind": "score",
                    **example_payload(example),
                    "candidates": list(self.candidates),
                }
            )
            logits = response.get("logits")
            if (
                response.get("kind") != "score"
                or not isinstance(logits, list)
                or len(logits) != len(self.candidates)
            ):
                raise BridgeProtocolError(
                    f"bad score response (want {len(self.candidates)} logits): "
                    f"{response}"
                )
            out[row] = logits
        if not np.all(np.isfinite(out)):
            raise BridgeProtocolError("bridge returned non-finite logits")
        return out

    def train(
        self,
        examples: Sequence[tuple[ClozeExample, str]],
        config: TrainConfig,
    ) -> list[float]:
        if not examples:
            raise BridgeError("cannot train on an empty example list")
        payload_examples = []
        for example, gold in examples:
            body = example_payload(example)
            body["gold"] = self.labels.index(gold)
            payload_examples.append(body)
        response = self._call(
            {
                "kind": "train",
                "config": {
                    "epochs": config.epochs,
                    "lr": config.lr,
                    "seed": config.seed,
                },
                "candidates": list(self.candidates),
                "examples": payload_examples,
            }
        )
        if response.get("kind") != "train" or "final_loss" not in response:
            raise BridgeProtocolError(f"bad train response: {response}")
        return [float(response["final_loss"])]

    def train_soft(
        self,
        examples: Sequence[tuple[ClozeExample, Sequence[float]]],
        config: TrainConfig,
    ) -> list[float]:
        """Distillation variant: per-example soft target distributions."""
        if not examples:
            raise BridgeError("cannot train on an empty example list")
        payload_examples = []
        for example, soft in examples:
            body = example_payload(example)
            body["soft"] = [float(p) for p in soft]
            payload_examples.append(body)
        response = self._call(
            {
                "kind": "train",
                "config": {
                    "epochs": config.epochs,
                    "lr": config.lr,
                    "seed": config.seed,
                },
                "candidates": list(self.candidates),
                "examples": payload_examples,
            }
        )
        if response.get("kind") != "train" or "final_loss" not in response:
            raise BridgeProtocolError(f"bad train response: {response}")
        return [float(response["final_loss"])]

    def save_checkpoint(self) -> str:
        response = self._call({"kind": "save"})
        if response.get("kind") != "save" or "handle" not in response:
            raise BridgeProtocolError(f"bad save response: {response}")
        return str(response["handle"])

    def load_checkpoint(self, handle: str) -> None:
        response = self._call({"kind": "load", "handle": handle})
        if response.get("kind") != "load" or not response.get("ok"):
            raise BridgeProtocolError(f"bad load response: {response}")


def build_golden_transcript() -> list[dict]:
    """Deterministic request/response exchange in canonical encoding.

    Conforming stub servers must reproduce every ``recv`` line byte for
    byte when fed the ``send`` lines in order on one connection.
    """
    stub = StubScorer()
    candidates = ["beginning", "inside", "outside"]
    sentence = ["A", "diagnosis", "was", "made", "in", "a", "young", "boy", "."]

    def cloze(target_index: int) -> dict:
        tokens = sentence + [
            "In", "the", "sentence", "above,", "the", "word",
            f'"{sentence[target_index]}"', "refers", "to", "the", "[MASK]",
            "of", "a", "disease", "entity.",
        ]
        return {
            "rendered_tokens": tokens,
            "mask_index": tokens.index("[MASK]"),
            "target_position": {"sentence_id": "s0", "token_index": target_index},
        }

    requests: list[dict] = [
        {"id": 1, "kind": "bogus"},
        {
            "id": 2,
            "kind": "handshake",
            "protocol": PROTOCOL_VERSION,
            "candidates": ["beginning", "inside", "out-side"],
        },
        {
            "id": 3,
            "kind": "handshake",
            "protocol": PROTOCOL_VERSION,
            "candidates": candidates,
        },
        {"id": 4, "kind": "score", **cloze(6), "candidates": candidates},
        {"id": 5, "kind": "score", **cloze(7), "candidates": candidates},
        {
            "id": 6,
            "kind": "train",
            "config": {"epochs": 1, "lr": 0.1, "seed": 7},
            "candidates": candidates,
            "examples": [
                {**cloze(6), "gold": 0},
                {**cloze(7), "gold": 1},
                {**cloze(6), "gold": 0},
            ],
        },
        {"id": 7, "kind": "score", **cloze(6), "candidates": candidates},
        {"id": 8, "kind": "save"},
        {"id": 9, "kind": "score", **cloze(8), "candidates": candidates},
    ]
    save_handle = None
    transcript = []
    for request in requests:
        response = stub.handle_request(request)
        if request["kind"] == "save":
            save_handle = response["handle"]
        transcript.append(
            {"send": canonical_json(request), "recv": canonical_json(response)}
        )
    load_request = {"id": 10, "kind": "load", "handle": save_handle}
    transcript.append(
        {
            "send": canonical_json(load_request),
            "recv": canonical_json(stub.handle_request(load_request)),
        }
    )
    final_score = {"id": 11, "kind": "score", **cloze(6), "candidates": candidates}
    transcript.append(
        {
            "send": canonical_json(final_score),
            "recv": canonical_json(stub.handle_request(final_score)),
        }
    )
    return transcript
