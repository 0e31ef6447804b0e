"""Stub backend: pinned hash-based scoring for protocol conformance.

Semantics are fixed by PROTOCOL.md so that golden transcripts recorded
against any conforming implementation replay byte-for-byte here:

* base logit = blake2b-8 of tokens/mask/candidate, mapped to [-4, 4)
* train adds 0.25 (or 0.25 * soft weight) to a per-token bias
* the checkpoint handle is the canonical JSON of the bias table
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Sequence

from .protocol import PROTOCOL_VERSION, canonical_json, mean_example_loss

_SINGLE_PIECE = re.compile(r"[A-Za-z]{1,16}")


def base_logit(rendered_tokens: Sequence[str], mask_index: int, candidate: str) -> float:
    payload = (
        "\x1f".join(rendered_tokens) + "\x1e" + str(mask_index) + "\x1e" + candidate
    )
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "little")
    return (value >> 11) * 2.0**-53 * 8.0 - 4.0


class StubBackend:
    capacity = 1

    def __init__(self) -> None:
        self.bias: dict[str, float] = {}

    def info(self) -> dict:
        return {"mode": "stub", "protocol": PROTOCOL_VERSION}

    def check_vocabulary(self, tokens: Sequence[str]) -> list[str]:
        return [tok for tok in tokens if not _SINGLE_PIECE.fullmatch(tok)]

    def score(
        self,
        rendered_tokens: Sequence[str],
        mask_index: int,
        candidates: Sequence[str],
    ) -> list[float]:
        return [
            base_logit(rendered_tokens, mask_index, cand) + self.bias.get(cand, 0.0)
            for cand in candidates
        ]

    def train(self, config: dict, candidates: Sequence[str], examples: Sequence[dict]) -> float:
        del config  # the stub has no optimizer; updates are fixed increments
        for example in examples:
            if "gold" in example:
                gold = candidates[example["gold"]]
                self.bias[gold] = self.bias.get(gold, 0.0) + 0.25
            else:
                for cand, weight in zip(candidates, example["soft"]):
                    self.bias[cand] = self.bias.get(cand, 0.0) + 0.25 * weight
        logits = [
            self.score(ex["rendered_tokens"], ex["mask_index"], candidates)
            for ex in examples
        ]
        return mean_example_loss(logits, examples)

    def save(self) -> str:
        return canonical_json(self.bias)

    def load(self, handle: str) -> None:
        self.bias = {str(k): float(v) for k, v in json.loads(handle).items()}
