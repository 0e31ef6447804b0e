"""Entity-level evaluation: span extraction, micro P/R/F1, seed statistics.

Spans are exact-match tuples (sentence id, start, end, type) with
inclusive indices.  Metrics are micro-averaged over the whole corpus;
empty denominators yield 0 by convention, and F1 is 0 when P + R = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .corpus import Corpus, Sentence, TagSchema, TagSequenceError

if TYPE_CHECKING:
    from .pipeline import PipelineConfig


class EvalError(ValueError):
    """Gold/prediction corpora are misaligned."""


@dataclass(frozen=True, order=True)
class EntitySpan:
    sentence_id: str
    start: int
    end: int
    type: str

    def __post_init__(self) -> None:
        if self.start > self.end or self.start < 0:
            raise ValueError(f"bad span bounds ({self.start}, {self.end})")


def extract_spans(
    sentence: Sentence, schema: TagSchema, entity_type: str
) -> list[EntitySpan]:
    """Decode maximal entity runs from a valid tag sequence.

    IOB2: every B opens a span that extends over following I tags.
    IO: maximal I runs.  Invalid unrepaired sequences raise.
    """
    if sentence.tags is None:
        raise TagSequenceError(f"sentence {sentence.id!r} has no tags")
    tags = sentence.tags
    if not schema.is_valid_sequence(tags):
        raise TagSequenceError(
            f"sentence {sentence.id!r}: invalid {schema.kind} sequence {tags}"
        )
    spans: list[EntitySpan] = []
    start: int | None = None
    for pos, tag in enumerate(tags):
        if schema.kind == "IOB2":
            if tag == "B":
                if start is not None:
                    spans.append(EntitySpan(sentence.id, start, pos - 1, entity_type))
                start = pos
            elif tag == "O" and start is not None:
                spans.append(EntitySpan(sentence.id, start, pos - 1, entity_type))
                start = None
        else:
            if tag == "I" and start is None:
                start = pos
            elif tag == "O" and start is not None:
                spans.append(EntitySpan(sentence.id, start, pos - 1, entity_type))
                start = None
    if start is not None:
        spans.append(EntitySpan(sentence.id, start, len(tags) - 1, entity_type))
    return spans


def spans_to_tags(
    spans: Sequence[EntitySpan], length: int, schema: TagSchema
) -> tuple[str, ...]:
    """Inverse of extract_spans for a single sentence."""
    tags = [schema.outside] * length
    for span in spans:
        if span.end >= length:
            raise ValueError(f"span {span} exceeds sentence length {length}")
        head = "B" if schema.kind == "IOB2" else "I"
        tags[span.start] = head
        for pos in range(span.start + 1, span.end + 1):
            tags[pos] = "I"
    return tuple(tags)


def corpus_spans(corpus: Corpus) -> set[EntitySpan]:
    found: set[EntitySpan] = set()
    for sent in corpus:
        found.update(extract_spans(sent, corpus.schema, corpus.entity_type))
    return found


def span_prf(gold: Corpus, pred: Corpus) -> tuple[float, float, float, int]:
    """Micro precision/recall/F1 over exact-match spans, plus gold support."""
    if len(gold) != len(pred):
        raise EvalError(
            f"corpus size mismatch: {len(gold)} gold vs {len(pred)} predicted"
        )
    for gold_sent, pred_sent in zip(gold, pred):
        if gold_sent.id != pred_sent.id:
            raise EvalError(
                f"sentence id mismatch: {gold_sent.id!r} vs {pred_sent.id!r}"
            )
        if len(gold_sent) != len(pred_sent):
            raise EvalError(f"token count mismatch in sentence {gold_sent.id!r}")
    gold_set = corpus_spans(gold)
    pred_set = corpus_spans(pred)
    hits = len(gold_set & pred_set)
    precision = hits / len(pred_set) if pred_set else 0.0
    recall = hits / len(gold_set) if gold_set else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return precision, recall, f1, len(gold_set)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation (n divisor)."""
    if not values:
        return 0.0, 0.0
    if min(values) == max(values):
        return values[0], 0.0
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


@dataclass(frozen=True)
class SeedMetrics:
    seed: int
    precision: float
    recall: float
    f1: float
    support: int

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
        }


@dataclass(frozen=True)
class EvalReport:
    """Per-seed metrics for one shot count, with mean and population std."""

    k: int
    per_seed: tuple[SeedMetrics, ...]
    config_fingerprint: str = ""

    def _series(self, name: str) -> list[float]:
        return [getattr(m, name) for m in self.per_seed]

    def mean(self, name: str) -> float:
        return mean_std(self._series(name))[0]

    def std(self, name: str) -> float:
        return mean_std(self._series(name))[1]

    def as_dict(self) -> dict:
        summary = {}
        for name in ("precision", "recall", "f1"):
            mean, std = mean_std(self._series(name))
            summary[name] = {"mean": mean, "std": std}
        return {
            "k": self.k,
            "per_seed": [m.as_dict() for m in self.per_seed],
            "summary": summary,
            "config_fingerprint": self.config_fingerprint,
        }


@dataclass
class ProtocolCell:
    k: int
    seed: int
    metrics: SeedMetrics | None = None
    error: str | None = None


@dataclass
class ProtocolReport:
    """Results of the multi-seed, multi-shot experiment grid."""

    cells: list[ProtocolCell] = field(default_factory=list)
    config_fingerprint: str = ""

    def ks(self) -> list[int]:
        return sorted({cell.k for cell in self.cells})

    def report_for(self, k: int) -> EvalReport:
        per_seed = tuple(
            cell.metrics
            for cell in sorted(self.cells, key=lambda c: (c.seed,))
            if cell.k == k and cell.metrics is not None
        )
        return EvalReport(k=k, per_seed=per_seed, config_fingerprint=self.config_fingerprint)

    @property
    def failed_cells(self) -> list[ProtocolCell]:
        return [cell for cell in self.cells if cell.error is not None]

    def as_dict(self) -> dict:
        return {
            "cells": [
                {
                    "k": cell.k,
                    "seed": cell.seed,
                    "metrics": cell.metrics.as_dict() if cell.metrics else None,
                    "error": cell.error,
                }
                for cell in sorted(self.cells, key=lambda c: (c.k, c.seed))
            ],
            "aggregates": [self.report_for(k).as_dict() for k in self.ks()],
            "config_fingerprint": self.config_fingerprint,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        """Aligned plain-text summary, one row per shot count."""
        header = f"{'k':>5}  {'precision':>19}  {'recall':>19}  {'f1':>19}  seeds"
        rows = [header, "-" * len(header)]
        for k in self.ks():
            report = self.report_for(k)
            cells = []
            for name in ("precision", "recall", "f1"):
                mean, std = mean_std(report._series(name))
                cells.append(f"{mean:.4f} +/- {std:.4f}")
            seeds = ",".join(str(m.seed) for m in report.per_seed)
            rows.append(
                f"{k:>5}  {cells[0]:>19}  {cells[1]:>19}  {cells[2]:>19}  {seeds}"
            )
        failed = self.failed_cells
        if failed:
            rows.append("")
            for cell in failed:
                rows.append(f"FAILED k={cell.k} seed={cell.seed}: {cell.error}")
        return "\n".join(rows) + "\n"

    def to_curve_csv(self) -> str:
        """Machine-readable curve: one row per (k, seed)."""
        lines = ["k,seed,precision,recall,f1"]
        for cell in sorted(self.cells, key=lambda c: (c.k, c.seed)):
            if cell.metrics is None:
                continue
            m = cell.metrics
            lines.append(f"{cell.k},{cell.seed},{m.precision!r},{m.recall!r},{m.f1!r}")
        return "\n".join(lines) + "\n"


def run_protocol(
    train: Corpus,
    test: Corpus,
    config: "PipelineConfig",
    ks: Sequence[int] | None = None,
    unlabeled: Corpus | None = None,
    workers: int = 1,
    run_dir=None,
    keep_going: bool = False,
) -> ProtocolReport:
    """Run the full (k, seed) experiment grid.

    Each cell samples k training sentences with its seed, runs the
    pipeline, and evaluates on the whole test set.  Cells execute
    independently (in parallel when workers > 1) and join
    deterministically by (k, seed) key.
    """
    from .pipeline import config_fingerprint, run_cell

    ks = list(ks) if ks is not None else [config.k]
    report = ProtocolReport(config_fingerprint=config_fingerprint(config, ks=ks))
    cell_keys = [(k, seed) for k in ks for seed in config.seeds]

    def run_one(key: tuple[int, int]) -> ProtocolCell:
        k, seed = key
        cell_dir = None
        if run_dir is not None:
            cell_dir = run_dir / "cells" / f"k{k}-s{seed}"
        try:
            metrics = run_cell(
                train, test, config, k=k, seed=seed,
                unlabeled=unlabeled, cell_dir=cell_dir,
            )
            return ProtocolCell(k=k, seed=seed, metrics=metrics)
        except Exception as exc:
            if not keep_going:
                raise
            return ProtocolCell(k=k, seed=seed, error=f"{type(exc).__name__}: {exc}")

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_CellRunner(train, test, config, unlabeled, run_dir, keep_going), cell_keys))
    else:
        cells = [run_one(key) for key in cell_keys]
    report.cells = sorted(cells, key=lambda c: (c.k, c.seed))
    return report


class _CellRunner:
    """Picklable cell executor for the process pool."""

    def __init__(self, train, test, config, unlabeled, run_dir, keep_going):
        self.train = train
        self.test = test
        self.config = config
        self.unlabeled = unlabeled
        self.run_dir = run_dir
        self.keep_going = keep_going

    def __call__(self, key: tuple[int, int]) -> ProtocolCell:
        from .pipeline import run_cell

        k, seed = key
        cell_dir = None
        if self.run_dir is not None:
            cell_dir = self.run_dir / "cells" / f"k{k}-s{seed}"
        try:
            metrics = run_cell(
                self.train, self.test, self.config, k=k, seed=seed,
                unlabeled=self.unlabeled, cell_dir=cell_dir,
            )
            return ProtocolCell(k=k, seed=seed, metrics=metrics)
        except Exception as exc:
            if not self.keep_going:
                raise
            return ProtocolCell(k=k, seed=seed, error=f"{type(exc).__name__}: {exc}")
