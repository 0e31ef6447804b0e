"""Token-tagged corpora: tag schemas, CoNLL-style I/O, sampling, stats.

A corpus is an ordered list of pre-tokenized sentences over a single
entity type, tagged under either the IO or IOB2 schema.  Values are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .prng import sample_indices

_ID_COMMENT_PREFIX = "#id="


class CorpusError(ValueError):
    """Base class for corpus construction and validation failures."""


class ConllParseError(CorpusError):
    def __init__(self, path: str, line_no: int, message: str) -> None:
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class TagSequenceError(CorpusError):
    """A tag sequence violates the schema and repair was not requested."""


@dataclass(frozen=True)
class TagSchema:
    """Entity-state label set for a single entity type.

    ``label_set`` is ordered and contains exactly one outside label; the
    order fixes candidate order everywhere downstream (verbalizers,
    logit vectors, probability columns).
    """

    kind: str
    label_set: tuple[str, ...]
    outside: str = "O"

    def __post_init__(self) -> None:
        if self.kind not in ("IO", "IOB2"):
            raise CorpusError(f"unsupported schema kind: {self.kind!r}")
        if not self.label_set:
            raise CorpusError("label_set must be non-empty")
        if len(set(self.label_set)) != len(self.label_set):
            raise CorpusError("label_set contains duplicates")
        if sum(1 for lab in self.label_set if lab == self.outside) != 1:
            raise CorpusError("label_set must contain exactly one outside label")

    @classmethod
    def iob2(cls) -> "TagSchema":
        return cls(kind="IOB2", label_set=("B", "I", "O"))

    @classmethod
    def io(cls) -> "TagSchema":
        return cls(kind="IO", label_set=("I", "O"))

    @classmethod
    def from_name(cls, name: str) -> "TagSchema":
        name = name.strip().upper()
        if name == "IOB2":
            return cls.iob2()
        if name == "IO":
            return cls.io()
        raise CorpusError(f"unknown schema name: {name!r}")

    @property
    def begin(self) -> str | None:
        return "B" if self.kind == "IOB2" else None

    @property
    def inside(self) -> str:
        return "I"

    def label_index(self, label: str) -> int:
        return self.label_set.index(label)

    def is_valid_sequence(self, tags: Sequence[str]) -> bool:
        prev = self.outside
        for tag in tags:
            if tag not in self.label_set:
                return False
            if self.kind == "IOB2" and tag == "I" and prev not in ("B", "I"):
                return False
            prev = tag
        return True


@dataclass(frozen=True)
class Sentence:
    """Pre-tokenized sentence with optional per-token tags."""

    id: str
    tokens: tuple[str, ...]
    tags: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.tokens:
            raise CorpusError(f"sentence {self.id!r}: tokens must be non-empty")
        if any(tok == "" for tok in self.tokens):
            raise CorpusError(f"sentence {self.id!r}: empty token")
        if self.tags is not None and len(self.tags) != len(self.tokens):
            raise CorpusError(
                f"sentence {self.id!r}: {len(self.tags)} tags for "
                f"{len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    def without_tags(self) -> "Sentence":
        return replace(self, tags=None)


@dataclass(frozen=True)
class Corpus:
    """Ordered sentences sharing one schema and one entity type."""

    sentences: tuple[Sentence, ...]
    schema: TagSchema
    entity_type: str = "entity"

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for sent in self.sentences:
            if sent.id in seen:
                raise CorpusError(f"duplicate sentence id: {sent.id!r}")
            seen.add(sent.id)
            if sent.tags is not None:
                for tag in sent.tags:
                    if tag not in self.schema.label_set:
                        raise CorpusError(
                            f"sentence {sent.id!r}: tag {tag!r} not in "
                            f"label set {self.schema.label_set}"
                        )

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    @property
    def tagged(self) -> bool:
        return all(s.tags is not None for s in self.sentences)

    def without_tags(self) -> "Corpus":
        return replace(
            self, sentences=tuple(s.without_tags() for s in self.sentences)
        )

    def subset(self, indices: Iterable[int]) -> "Corpus":
        picked = tuple(self.sentences[i] for i in indices)
        return replace(self, sentences=picked)


@dataclass(frozen=True)
class KShotSpec:
    """Shot count and seed for one k-shot selection."""

    k: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 0:
            raise CorpusError("k must be >= 0")


def validate_tags(sentence: Sentence, schema: TagSchema, repair: bool = False) -> Sentence:
    """Check a tag sequence against the schema, optionally repairing it.

    Repair rewrites every I that opens a run without a preceding B/I to
    B (IOB2 only; IO sequences are always valid).  With repair=False an
    invalid sequence raises TagSequenceError.
    """
    if sentence.tags is None:
        raise TagSequenceError(f"sentence {sentence.id!r} has no tags")
    for pos, tag in enumerate(sentence.tags):
        if tag not in schema.label_set:
            raise TagSequenceError(
                f"sentence {sentence.id!r}, token {pos}: unknown tag {tag!r}"
            )
    if schema.kind == "IO":
        return sentence
    repaired: list[str] = []
    prev = schema.outside
    for pos, tag in enumerate(sentence.tags):
        if tag == "I" and prev not in ("B", "I"):
            if not repair:
                raise TagSequenceError(
                    f"sentence {sentence.id!r}, token {pos}: I without a "
                    "preceding B/I"
                )
            tag = "B"
        repaired.append(tag)
        prev = tag
    return replace(sentence, tags=tuple(repaired))


def validate_corpus(corpus: Corpus, repair: bool = False) -> Corpus:
    """Apply validate_tags to every sentence."""
    fixed = tuple(validate_tags(s, corpus.schema, repair=repair) for s in corpus)
    return replace(corpus, sentences=fixed)


def sample_k_shot(corpus: Corpus, spec: KShotSpec) -> Corpus:
    """Uniform without-replacement selection of min(k, n) sentences.

    Deterministic for a fixed (corpus order, seed); see prng for the
    pinned selection algorithm.  Selected sentences keep corpus order.
    """
    if not corpus.tagged:
        raise CorpusError("k-shot sampling requires a tagged corpus")
    if spec.k > len(corpus):
        warnings.warn(
            f"k={spec.k} exceeds corpus size {len(corpus)}; "
            "returning the whole corpus",
            stacklevel=2,
        )
    indices = sample_indices(len(corpus), spec.k, spec.seed)
    return corpus.subset(indices)


def corpus_stats(corpus: Corpus) -> dict:
    """Sentence, token, entity-mention and per-label counts."""
    from .evaluation import extract_spans

    label_counts = {label: 0 for label in corpus.schema.label_set}
    tokens = 0
    mentions = 0
    for sent in corpus:
        tokens += len(sent)
        if sent.tags is None:
            raise CorpusError(f"sentence {sent.id!r} has no tags")
        for tag in sent.tags:
            label_counts[tag] += 1
        mentions += len(extract_spans(sent, corpus.schema, corpus.entity_type))
    return {
        "sentences": len(corpus),
        "tokens": tokens,
        "entity_mentions": mentions,
        "label_counts": label_counts,
    }


def stats_json(corpus: Corpus) -> str:
    return json.dumps(corpus_stats(corpus), sort_keys=True, indent=2)


def read_conll(
    path: str | Path,
    schema: TagSchema,
    entity_type: str = "entity",
    tagged: bool = True,
) -> Corpus:
    """Parse a CoNLL-style file: token first column, tag last, blank-line
    separated sentences.  Tab or space separated; UTF-8; LF or CRLF.

    With tagged=False only the first column is read and sentences carry
    no tags (single-column files are then accepted).  Lines starting
    with ``#id=`` set the id of the following sentence; ids default to
    the sentence's zero-based position (``s0``, ``s1``, ...).
    """
    path = Path(path)
    sentences: list[Sentence] = []
    tokens: list[str] = []
    tags: list[str] = []
    pending_id: str | None = None
    block_start = 0

    def flush(line_no: int) -> None:
        nonlocal tokens, tags, pending_id
        if not tokens:
            return
        sid = pending_id if pending_id is not None else f"s{len(sentences)}"
        sent = Sentence(
            id=sid,
            tokens=tuple(tokens),
            tags=tuple(tags) if tagged else None,
        )
        if tagged:
            try:
                sent = validate_tags(sent, schema, repair=False)
            except TagSequenceError as exc:
                raise ConllParseError(str(path), block_start, str(exc)) from exc
        sentences.append(sent)
        tokens, tags = [], []
        pending_id = None

    with path.open("r", encoding="utf-8", newline="") as handle:
        line_no = 0
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\r\n")
            if line.startswith(_ID_COMMENT_PREFIX):
                pending_id = line[len(_ID_COMMENT_PREFIX) :]
                continue
            if not line.strip():
                flush(line_no)
                continue
            if not tokens:
                block_start = line_no
            columns = line.split()
            if tagged:
                if len(columns) < 2:
                    raise ConllParseError(
                        str(path), line_no, f"expected >= 2 columns, got {line!r}"
                    )
                token, tag = columns[0], columns[-1]
                if tag not in schema.label_set:
                    raise ConllParseError(
                        str(path),
                        line_no,
                        f"unknown tag {tag!r} (label set {schema.label_set})",
                    )
                tags.append(tag)
            else:
                token = columns[0]
            tokens.append(token)
        flush(line_no + 1)

    if not sentences:
        raise ConllParseError(str(path), 1, "no sentences found")
    return Corpus(sentences=tuple(sentences), schema=schema, entity_type=entity_type)


def write_conll(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus in the format read_conll accepts (LF, UTF-8).

    Ids differing from the positional default are preserved via ``#id=``
    comment lines so read_conll(write_conll(c)) == c.
    """
    path = Path(path)
    blocks: list[str] = []
    for index, sent in enumerate(corpus):
        lines: list[str] = []
        if sent.id != f"s{index}":
            lines.append(f"{_ID_COMMENT_PREFIX}{sent.id}")
        for pos, token in enumerate(sent.tokens):
            if sent.tags is not None:
                lines.append(f"{token}\t{sent.tags[pos]}")
            else:
                lines.append(token)
        blocks.append("\n".join(lines))
    payload = "\n\n".join(blocks) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(payload, encoding="utf-8", newline="\n")
    tmp.replace(path)
