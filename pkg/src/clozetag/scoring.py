"""Masked-position scoring: restricted softmax, baseline scorer, training.

The scorer boundary is: given a rendered cloze example and an ordered
candidate list (the verbalizer tokens in label order), return one raw
logit per candidate at the mask position.  Probabilities are obtained
by normalizing only over those candidates; any additive shift of the
logits therefore cancels, which is why the boundary mandates raw
scores.

The built-in scorer is a linear softmax model over hashed sparse
context features: deterministic, convex, and cheap enough to run the
whole experiment grid on a laptop.  It is a stand-in for a masked LM,
not an approximation of one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .prng import SplitMix64, shuffled_indices
from .pvp import PVP, ClozeExample

DEFAULT_HASH_DIM = 1 << 17
_MODEL_FORMAT = "clozetag-linear"


class ScoringError(ValueError):
    pass


class CandidateError(ScoringError):
    """Requested candidates do not match the scorer's vocabulary."""


def restricted_softmax(logits: Sequence[float] | np.ndarray) -> np.ndarray:
    """Normalize raw candidate logits into a distribution.

    Stabilized by max subtraction, so arbitrarily large magnitudes are
    safe and additive shifts leave the output unchanged.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ScoringError("logits must be a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ScoringError("logits must be finite")
    shifted = arr - arr.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def restricted_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise restricted softmax for a batch of logit vectors."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _suffix3(token: str) -> str:
    return token[-3:] if len(token) > 3 else token


def _window_features(
    tokens: Sequence[str],
    center: int,
    window: int,
    prefix: str,
    include_center: bool = True,
) -> list[str]:
    feats: list[str] = []
    n = len(tokens)
    for offset in range(-window, window + 1):
        if offset == 0 and not include_center:
            continue
        pos = center + offset
        if 0 <= pos < n:
            tok = tokens[pos]
            feats.append(f"{prefix}{offset}={tok}")
            feats.append(f"{prefix}{offset}l={tok.lower()}")
            feats.append(f"{prefix}{offset}s={_suffix3(tok)}")
        else:
            feats.append(f"{prefix}{offset}=<edge>")
    return feats


def cloze_features(example: ClozeExample, window: int) -> list[str]:
    """Positional features of the target token and the mask neighborhood.

    Offsets are baked into the feature ids.  The mask token itself is
    skipped (it is constant), so window=0 yields the target token's
    features only.
    """
    feats = _window_features(
        example.rendered_tokens, example.focus_index, window, "t"
    )
    feats += _window_features(
        example.rendered_tokens, example.mask_index, window, "m", include_center=False
    )
    return feats


def token_features(tokens: Sequence[str], index: int, window: int) -> list[str]:
    """Context features of one token inside a raw sentence."""
    return _window_features(tokens, index, window, "t")


def hash_feature(feature: str, dim: int) -> int:
    """Stable 64-bit blake2b hash folded into [0, dim)."""
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


@dataclass(frozen=True)
class CSRFeatures:
    """Hashed feature multisets for a batch of examples."""

    indptr: np.ndarray
    indices: np.ndarray
    dim: int

    @property
    def n_examples(self) -> int:
        return self.indptr.shape[0] - 1

    @classmethod
    def build(
        cls,
        feature_lists: Iterable[Sequence[str]],
        dim: int,
        memo: dict[str, int] | None = None,
    ) -> "CSRFeatures":
        if memo is None:
            memo = {}
        indptr = [0]
        flat: list[int] = []
        for feats in feature_lists:
            for feat in feats:
                idx = memo.get(feat)
                if idx is None:
                    idx = hash_feature(feat, dim)
                    memo[feat] = idx
                flat.append(idx)
            indptr.append(len(flat))
        return cls(
            indptr=np.asarray(indptr, dtype=np.int64),
            indices=np.asarray(flat, dtype=np.int32),
            dim=dim,
        )

    def subset(self, ids: np.ndarray) -> "CSRFeatures":
        parts = [
            self.indices[self.indptr[i] : self.indptr[i + 1]] for i in ids
        ]
        counts = self.indptr[ids + 1] - self.indptr[ids]
        indptr = np.zeros(len(ids) + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = (
            np.concatenate(parts) if parts else np.empty(0, dtype=np.int32)
        )
        return CSRFeatures(indptr=indptr, indices=indices.astype(np.int32), dim=self.dim)


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent settings for the built-in models.

    batch_size=None runs full-batch descent (the deterministic
    default); otherwise examples are shuffled once per epoch with a
    SplitMix64 stream seeded from ``seed`` (one 64-bit draw per epoch,
    in epoch order).
    """

    epochs: int = 5
    lr: float = 0.1
    l2: float = 0.0
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ScoringError("epochs must be >= 1")
        if self.lr <= 0:
            raise ScoringError("lr must be positive")


class LinearSoftmaxModel:
    """Multinomial logistic model over hashed sparse features."""

    def __init__(self, labels: Sequence[str], dim: int = DEFAULT_HASH_DIM) -> None:
        self.labels = tuple(labels)
        self.dim = dim
        self.weights = np.zeros((dim, len(self.labels)), dtype=np.float64)
        self.intercept = np.zeros(len(self.labels), dtype=np.float64)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def logits_matrix(self, csr: CSRFeatures) -> np.ndarray:
        if csr.dim != self.dim:
            raise ScoringError("feature dim mismatch")
        return kernels.csr_logits(csr.indptr, csr.indices, self.weights, self.intercept)

    def mean_loss(self, csr: CSRFeatures, targets: np.ndarray) -> float:
        logp = log_softmax_rows(self.logits_matrix(csr))
        return float(-(targets * logp).sum(axis=1).mean())

    def gradients(
        self, csr: CSRFeatures, targets: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Mean cross-entropy gradients (weights, intercept); no L2 term."""
        probs = restricted_softmax_rows(self.logits_matrix(csr))
        dprobs = (probs - targets) / csr.n_examples
        return kernels.csr_grad(csr.indptr, csr.indices, dprobs, self.dim)

    def _step(self, csr: CSRFeatures, targets: np.ndarray, lr: float, l2: float) -> None:
        probs = restricted_softmax_rows(self.logits_matrix(csr))
        dprobs = (probs - targets) / csr.n_examples
        if l2 > 0.0:
            self.weights *= 1.0 - lr * l2
        kernels.csr_step(
            csr.indptr, csr.indices, self.weights, self.intercept, dprobs, lr
        )

    def fit(
        self, csr: CSRFeatures, targets: np.ndarray, config: TrainConfig
    ) -> list[float]:
        """Minimize mean cross-entropy against (possibly soft) targets.

        Returns the full-data loss measured at the start of every epoch
        plus the final loss (length epochs + 1).
        """
        if csr.n_examples == 0:
            raise ScoringError("cannot train on an empty example list")
        if targets.shape != (csr.n_examples, self.n_labels):
            raise ScoringError("targets shape mismatch")
        losses: list[float] = []
        seed_stream = SplitMix64(config.seed)
        for _ in range(config.epochs):
            losses.append(self.mean_loss(csr, targets))
            if config.batch_size is None:
                self._step(csr, targets, config.lr, config.l2)
                continue
            epoch_seed = seed_stream.next_u64()
            order = np.asarray(shuffled_indices(csr.n_examples, epoch_seed))
            for start in range(0, csr.n_examples, config.batch_size):
                ids = order[start : start + config.batch_size]
                self._step(csr.subset(ids), targets[ids], config.lr, config.l2)
        losses.append(self.mean_loss(csr, targets))
        return losses

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        """Deterministic binary serialization: JSON header line + raw
        little-endian float64 weight and intercept bytes."""
        header = {
            "format": _MODEL_FORMAT,
            "version": 1,
            "dim": self.dim,
            "labels": list(self.labels),
            "extra": extra or {},
        }
        payload = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
        payload += self.weights.astype("<f8").tobytes(order="C")
        payload += self.intercept.astype("<f8").tobytes()
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(payload)
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> tuple["LinearSoftmaxModel", dict]:
        blob = Path(path).read_bytes()
        newline = blob.index(b"\n")
        header = json.loads(blob[:newline].decode("utf-8"))
        if header.get("format") != _MODEL_FORMAT:
            raise ScoringError(f"{path}: not a {_MODEL_FORMAT} file")
        model = cls(labels=header["labels"], dim=int(header["dim"]))
        body = blob[newline + 1 :]
        w_bytes = model.dim * model.n_labels * 8
        model.weights = (
            np.frombuffer(body[:w_bytes], dtype="<f8")
            .reshape(model.dim, model.n_labels)
            .astype(np.float64)
        )
        model.intercept = np.frombuffer(
            body[w_bytes : w_bytes + model.n_labels * 8], dtype="<f8"
        ).astype(np.float64)
        if not np.all(np.isfinite(model.weights)):
            raise ScoringError(f"{path}: non-finite weights")
        return model, header.get("extra", {})


@dataclass(frozen=True)
class ScoreRequest:
    """One scoring call: a cloze example plus the ordered candidates."""

    example: ClozeExample
    candidates: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ScoringError("candidates must be non-empty")
        if len(set(self.candidates)) != len(self.candidates):
            raise ScoringError("candidates must be duplicate-free")

    @property
    def target_position(self) -> tuple[str, int]:
        return (self.example.sentence_id, self.example.token_index)


class BaselineScorer:
    """Trainable linear scorer bound to one PVP's candidate order."""

    def __init__(
        self,
        labels: Sequence[str],
        candidates: Sequence[str],
        window: int = 2,
        dim: int = DEFAULT_HASH_DIM,
    ) -> None:
        if len(labels) != len(candidates):
            raise ScoringError("labels and candidates must align")
        self.candidates = tuple(candidates)
        self.window = window
        self.model = LinearSoftmaxModel(labels=labels, dim=dim)
        self._memo: dict[str, int] = {}

    @classmethod
    def for_pvp(
        cls, pvp: PVP, window: int = 2, dim: int = DEFAULT_HASH_DIM
    ) -> "BaselineScorer":
        return cls(
            labels=pvp.schema.label_set,
            candidates=pvp.candidates(),
            window=window,
            dim=dim,
        )

    @property
    def labels(self) -> tuple[str, ...]:
        return self.model.labels

    def _check_candidates(self, candidates: Sequence[str]) -> None:
        if tuple(candidates) != self.candidates:
            unknown = [c for c in candidates if c not in self.candidates]
            raise CandidateError(
                f"candidates {tuple(candidates)} do not match scorer vocabulary "
                f"{self.candidates}"
                + (f" (unknown: {unknown})" if unknown else " (order differs)")
            )

    def featurize(self, examples: Sequence[ClozeExample]) -> CSRFeatures:
        return CSRFeatures.build(
            (cloze_features(ex, self.window) for ex in examples),
            dim=self.model.dim,
            memo=self._memo,
        )

    def score_batch(self, examples: Sequence[ClozeExample]) -> np.ndarray:
        return self.model.logits_matrix(self.featurize(examples))

    def score(self, request: ScoreRequest) -> np.ndarray:
        """Raw per-candidate logits for one request."""
        self._check_candidates(request.candidates)
        return self.score_batch([request.example])[0]

    def train(
        self,
        examples: Sequence[tuple[ClozeExample, str]],
        config: TrainConfig,
    ) -> list[float]:
        if not examples:
            raise ScoringError("cannot train on an empty example list")
        csr = self.featurize([ex for ex, _ in examples])
        targets = np.zeros((len(examples), self.model.n_labels))
        for row, (_, gold) in enumerate(examples):
            targets[row, self.model.labels.index(gold)] = 1.0
        return self.model.fit(csr, targets, config)

    def save(self, path: str | Path) -> None:
        self.model.save(
            path,
            extra={
                "kind": "baseline-scorer",
                "window": self.window,
                "candidates": list(self.candidates),
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "BaselineScorer":
        model, extra = LinearSoftmaxModel.load(path)
        scorer = cls(
            labels=model.labels,
            candidates=extra["candidates"],
            window=int(extra["window"]),
            dim=model.dim,
        )
        scorer.model = model
        return scorer


def epochs_for_shots(k: int, schedule: dict[int, int]) -> int:
    """Look up the epoch count for a shot count; exact match required."""
    if k in schedule:
        return schedule[k]
    raise ScoringError(
        f"no epoch schedule entry for k={k}; add one or set an explicit override"
    )


def gradient_check(
    scorer: BaselineScorer,
    example: ClozeExample,
    gold_label: str,
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference
    gradients of the single-example cross-entropy.

    Checks every touched weight coordinate, every intercept coordinate,
    and one untouched weight row (whose gradient must be zero).
    """
    if epsilon <= 0:
        raise ScoringError("epsilon must be positive")
    model = scorer.model
    csr = scorer.featurize([example])
    gold_index = model.labels.index(gold_label)
    target = np.zeros((1, model.n_labels))
    target[0, gold_index] = 1.0

    gw, gb = model.gradients(csr, target)

    def loss() -> float:
        return model.mean_loss(csr, target)

    touched = sorted(set(int(f) for f in csr.indices))
    untouched = next(f for f in range(model.dim) if f not in set(touched))
    max_err = 0.0

    def rel_err(analytic: float, numeric: float) -> float:
        scale = max(abs(analytic), abs(numeric), 1e-6)
        return abs(analytic - numeric) / scale

    for f in [*touched, untouched]:
        for c in range(model.n_labels):
            original = model.weights[f, c]
            model.weights[f, c] = original + epsilon
            up = loss()
            model.weights[f, c] = original - epsilon
            down = loss()
            model.weights[f, c] = original
            numeric = (up - down) / (2 * epsilon)
            max_err = max(max_err, rel_err(gw[f, c], numeric))
    for c in range(model.n_labels):
        original = model.intercept[c]
        model.intercept[c] = original + epsilon
        up = loss()
        model.intercept[c] = original - epsilon
        down = loss()
        model.intercept[c] = original
        numeric = (up - down) / (2 * epsilon)
        max_err = max(max_err, rel_err(gb[c], numeric))
    return max_err
