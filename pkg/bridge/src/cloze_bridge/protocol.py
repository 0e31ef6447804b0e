"""Framing and shared numeric helpers for the wire protocol."""

from __future__ import annotations

import json
import math
from typing import Sequence

PROTOCOL_VERSION = 1


def canonical_json(obj) -> str:
    """The canonical line encoding: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def log_softmax(logits: Sequence[float]) -> list[float]:
    """Max-subtracted log-softmax over the candidate logits."""
    m = max(logits)
    log_denom = math.log(sum(math.exp(v - m) for v in logits))
    return [v - m - log_denom for v in logits]


def softmax(logits: Sequence[float]) -> list[float]:
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    total = sum(exps)
    return [e / total for e in exps]


def mean_example_loss(
    logits_per_example: Sequence[Sequence[float]], examples: Sequence[dict]
) -> float:
    """Cross-entropy averaged over examples, in order (float64)."""
    total = 0.0
    for logits, example in zip(logits_per_example, examples):
        logp = log_softmax(logits)
        if "gold" in example:
            total += -logp[example["gold"]]
        else:
            total += -sum(w * lp for w, lp in zip(example["soft"], logp))
    return total / len(examples)
