"""Pattern-verbalizer pairs and per-token cloze expansion.

A pattern is a whitespace-tokenized template over four placeholders:

* ``{x}``     the sentence tokens (must stand alone in the template)
* ``{t}``     the target token, rendered wrapped in ASCII double quotes
* ``{etype}`` the corpus entity type
* ``{mask}``  the single mask position, rendered as ``[MASK]``

``{mask}`` may carry attached punctuation in the template (as in
``Answer: {mask}.``); rendering always emits the mask as a standalone
token and splits the attachment off, because downstream scorers address
the mask position by token index.

When a surface form occurs several times in a sentence the rendered
question alone cannot identify the target, so every example carries the
target token index out-of-band; scorers receive it as position
metadata.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

from .corpus import Sentence, TagSchema

MASK_TOKEN = "[MASK]"

_PLACEHOLDER = re.compile(r"\{(x|t|etype|mask)\}")


class PatternError(ValueError):
    """Malformed pattern template or verbalizer."""


@dataclass(frozen=True)
class Pattern:
    """Cloze question template with exactly one mask placeholder."""

    id: str
    template: str

    def __post_init__(self) -> None:
        names = _PLACEHOLDER.findall(self.template)
        if names.count("mask") != 1:
            raise PatternError(
                f"pattern {self.id!r}: exactly one {{mask}} required, "
                f"found {names.count('mask')}"
            )
        if "x" not in names or "t" not in names:
            raise PatternError(
                f"pattern {self.id!r}: template must contain {{x}} and {{t}}"
            )
        unknown = re.findall(r"\{(\w+)\}", self.template)
        for name in unknown:
            if name not in ("x", "t", "etype", "mask"):
                raise PatternError(
                    f"pattern {self.id!r}: unknown placeholder {{{name}}}"
                )
        for piece in self.template.split():
            if "{x}" in piece and piece != "{x}":
                raise PatternError(
                    f"pattern {self.id!r}: {{x}} must be a standalone token"
                )


@dataclass(frozen=True)
class Verbalizer:
    """Injective map from labels to single vocabulary tokens."""

    mapping: tuple[tuple[str, str], ...]

    @classmethod
    def from_dict(cls, mapping: dict[str, str]) -> "Verbalizer":
        return cls(mapping=tuple(sorted(mapping.items())))

    def as_dict(self) -> dict[str, str]:
        return dict(self.mapping)

    def __getitem__(self, label: str) -> str:
        for key, value in self.mapping:
            if key == label:
                return value
        raise KeyError(label)

    def validate(self, schema: TagSchema) -> None:
        mapping = self.as_dict()
        missing = [lab for lab in schema.label_set if lab not in mapping]
        if missing:
            raise PatternError(f"verbalizer missing labels: {missing}")
        extra = [lab for lab in mapping if lab not in schema.label_set]
        if extra:
            raise PatternError(f"verbalizer has unknown labels: {extra}")
        tokens = [mapping[lab] for lab in schema.label_set]
        if len(set(tokens)) != len(tokens):
            raise PatternError(f"verbalizer not injective: {tokens}")
        for token in tokens:
            if not token or any(ch.isspace() for ch in token):
                raise PatternError(f"verbalizer token {token!r} is not a single token")


@dataclass(frozen=True)
class PVP:
    """A pattern plus a verbalizer, validated against a schema."""

    pattern: Pattern
    verbalizer: Verbalizer
    schema: TagSchema

    def __post_init__(self) -> None:
        self.verbalizer.validate(self.schema)

    @property
    def id(self) -> str:
        return self.pattern.id

    def candidates(self) -> tuple[str, ...]:
        """Verbalizer tokens in label_set order."""
        return tuple(self.verbalizer[lab] for lab in self.schema.label_set)


@dataclass(frozen=True)
class ClozeExample:
    """One rendered cloze question targeting one source token.

    ``focus_index`` is the position of the target token inside
    ``rendered_tokens``: the in-sentence copy when visible, otherwise
    the quoted copy inside the pattern text (possible after left
    truncation of long sentences).
    """

    sentence_id: str
    token_index: int
    rendered_tokens: tuple[str, ...]
    mask_index: int
    focus_index: int
    gold_label: str | None = None

    def __post_init__(self) -> None:
        if self.rendered_tokens.count(MASK_TOKEN) != 1:
            raise PatternError(
                f"example ({self.sentence_id!r}, {self.token_index}): "
                f"expected exactly one mask token"
            )
        if self.rendered_tokens[self.mask_index] != MASK_TOKEN:
            raise PatternError("mask_index does not point at the mask token")

    @property
    def rendered_text(self) -> str:
        return " ".join(self.rendered_tokens)


BUILTIN_TEMPLATES = {
    "p1": (
        "{x} In the sentence above, the word {t} refers to the {mask} "
        "of a {etype} entity."
    ),
    "p2": (
        "{x} Question: In the passage above, which part of a {etype} entity "
        "does the word {t} refers to? Answer: {mask}."
    ),
}

DEFAULT_VERBALIZERS = {
    "IOB2": {"B": "beginning", "I": "inside", "O": "outside"},
    "IO": {"I": "inside", "O": "outside"},
}


def default_verbalizer(schema: TagSchema) -> Verbalizer:
    return Verbalizer.from_dict(DEFAULT_VERBALIZERS[schema.kind])


def builtin_pvps(entity_type: str, schema: TagSchema) -> list[PVP]:
    """The two built-in patterns with the beginning/inside/outside verbalizer."""
    del entity_type  # substituted at render time, kept for signature clarity
    verbalizer = default_verbalizer(schema)
    return [
        PVP(Pattern(id=name, template=template), verbalizer, schema)
        for name, template in BUILTIN_TEMPLATES.items()
    ]


def builtin_pvp(name: str, schema: TagSchema) -> PVP:
    if name not in BUILTIN_TEMPLATES:
        raise PatternError(f"unknown builtin pattern {name!r}")
    return PVP(
        Pattern(id=name, template=BUILTIN_TEMPLATES[name]),
        default_verbalizer(schema),
        schema,
    )


def load_pvp_file(path: str | Path, schema: TagSchema) -> PVP:
    """Load a user pattern file: JSON with id, template, verbalizer."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise PatternError(f"{path}: cannot read pattern file ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise PatternError(f"{path}: not valid JSON ({exc})") from exc
    for key in ("id", "template", "verbalizer"):
        if key not in payload:
            raise PatternError(f"{path}: missing field {key!r}")
    pattern = Pattern(id=str(payload["id"]), template=str(payload["template"]))
    verbalizer = Verbalizer.from_dict(dict(payload["verbalizer"]))
    return PVP(pattern, verbalizer, schema)


def resolve_pvp(spec: str, schema: TagSchema) -> PVP:
    """Resolve a --pattern argument: builtin name or a file path."""
    if spec in BUILTIN_TEMPLATES:
        return builtin_pvp(spec, schema)
    return load_pvp_file(spec, schema)


def _emit_template_token(piece: str, values: dict[str, str]) -> Iterator[str]:
    """Substitute placeholders inside one template token.

    A piece containing {mask} is split so the mask stands alone.
    """
    if "{mask}" in piece:
        before, after = piece.split("{mask}", 1)
        if before:
            yield from _emit_template_token(before, values)
        yield MASK_TOKEN
        if after:
            yield from _emit_template_token(after, values)
        return
    out = _PLACEHOLDER.sub(lambda m: values[m.group(1)], piece)
    if out:
        yield out


def render(
    pattern: Pattern,
    sentence: Sentence,
    token_index: int,
    entity_type: str,
    max_tokens: int | None = None,
) -> ClozeExample:
    """Render one cloze question for (sentence, token_index).

    With ``max_tokens`` set, over-long renderings drop sentence tokens
    from the left; the pattern text and mask always survive, so the
    example stays well-formed even when the target's context is gone.
    """
    if not 0 <= token_index < len(sentence.tokens):
        raise IndexError(
            f"token_index {token_index} out of range for sentence "
            f"{sentence.id!r} of length {len(sentence.tokens)}"
        )
    target = sentence.tokens[token_index]
    quoted = f'"{target}"'
    values = {"t": quoted, "etype": entity_type}

    pattern_pieces = pattern.template.split()
    x_slot = pattern_pieces.index("{x}")
    fixed_count = 0
    for piece in pattern_pieces:
        if piece == "{x}":
            continue
        fixed_count += sum(1 for _ in _emit_template_token(piece, values))

    keep = len(sentence.tokens)
    if max_tokens is not None:
        keep = max(0, min(keep, max_tokens - fixed_count))
    dropped = len(sentence.tokens) - keep
    visible = sentence.tokens[dropped:]

    rendered: list[str] = []
    sentence_start = -1
    quoted_index = -1
    for slot, piece in enumerate(pattern_pieces):
        if slot == x_slot:
            sentence_start = len(rendered)
            rendered.extend(visible)
            continue
        if "{t}" in piece and quoted_index < 0:
            quoted_index = len(rendered)
        rendered.extend(_emit_template_token(piece, values))
    mask_index = rendered.index(MASK_TOKEN)

    if token_index >= dropped:
        focus_index = sentence_start + (token_index - dropped)
    else:
        focus_index = quoted_index
    return ClozeExample(
        sentence_id=sentence.id,
        token_index=token_index,
        rendered_tokens=tuple(rendered),
        mask_index=mask_index,
        focus_index=focus_index,
        gold_label=sentence.tags[token_index] if sentence.tags else None,
    )


def expand(
    pattern: Pattern,
    sentence: Sentence,
    entity_type: str,
    max_tokens: int | None = None,
) -> list[ClozeExample]:
    """One cloze example per token, in token order."""
    return [
        render(pattern, sentence, i, entity_type, max_tokens=max_tokens)
        for i in range(len(sentence.tokens))
    ]


def expand_corpus(
    pattern: Pattern,
    sentences: Sequence[Sentence],
    entity_type: str,
    max_tokens: int | None = None,
) -> list[ClozeExample]:
    examples: list[ClozeExample] = []
    for sentence in sentences:
        examples.extend(expand(pattern, sentence, entity_type, max_tokens=max_tokens))
    return examples
