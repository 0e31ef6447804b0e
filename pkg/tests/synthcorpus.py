"""Synthetic gazetteer corpus for end-to-end runs.

Entities come from a fixed 200-term lexicon (150 single-token terms
built from 25 stems x 6 suffixes, plus 50 two-token variants) embedded
in templated sentences with contextual cue words.  Suffixes are
distinctive, so models that generalize from suffix and context features
can tag lexicon terms never seen in a k-shot sample.
"""

from __future__ import annotations

import random

from clozetag.corpus import Corpus, Sentence, TagSchema

_STEMS = [
    "cardi", "neur", "derm", "hepat", "nephr", "gastr", "arthr", "bronch",
    "oste", "myel", "angi", "col", "enter", "phleb", "rhin", "laryng",
    "mening", "ot", "cyst", "dactyl", "gloss", "hem", "kerat", "lip", "mast",
]
_SUFFIXES = ["itis", "osis", "oma", "emia", "opathy", "algia"]
_MODIFIERS = ["chronic", "acute", "severe", "mild", "recurrent"]


def build_lexicon() -> list[tuple[str, ...]]:
    """Exactly 200 terms: 150 single-token plus 50 two-token."""
    singles = [stem + suffix for stem in _STEMS for suffix in _SUFFIXES]
    assert len(singles) == 150
    doubles = []
    for i in range(50):
        modifier = _MODIFIERS[i % len(_MODIFIERS)]
        doubles.append((modifier, singles[(i * 3) % len(singles)]))
    lexicon = [(term,) for term in singles] + doubles
    assert len(lexicon) == 200
    return lexicon


_ENTITY_TEMPLATES = [
    "the patient was diagnosed with <E> last week .",
    "tests confirmed <E> in the right lobe .",
    "a history of <E> was noted on admission .",
    "examination revealed signs of <E> today .",
    "clinicians suspected <E> after the second scan .",
    "treatment for <E> was started immediately .",
    "<E> was ruled out by the follow up test .",
    "the chart lists <E> and <E> as comorbidities .",
    "imaging showed <E> near the lower margin .",
    "she was admitted with <E> on monday morning .",
]

_PLAIN_TEMPLATES = [
    "the patient was discharged home without complications .",
    "vital signs remained stable through the night .",
    "the family met with staff to plan further care .",
    "no abnormal findings were reported by the team .",
    "follow up visits were scheduled for next month .",
    "records of the ward were updated by the nurse .",
    "the report of the committee praised the staff .",
    "medication doses were adjusted after the morning round .",
]


def generate_corpus(
    n_sentences: int,
    seed: int,
    entity_type: str = "disease",
    id_prefix: str = "g",
) -> Corpus:
    rng = random.Random(seed)
    lexicon = build_lexicon()
    schema = TagSchema.iob2()
    sentences = []
    for index in range(n_sentences):
        if rng.random() < 0.7:
            template = rng.choice(_ENTITY_TEMPLATES)
        else:
            template = rng.choice(_PLAIN_TEMPLATES)
        tokens: list[str] = []
        tags: list[str] = []
        for piece in template.split():
            if piece == "<E>":
                term = rng.choice(lexicon)
                for i, word in enumerate(term):
                    tokens.append(word)
                    tags.append("B" if i == 0 else "I")
            else:
                tokens.append(piece)
                tags.append("O")
        sentences.append(
            Sentence(id=f"{id_prefix}{index}", tokens=tuple(tokens), tags=tuple(tags))
        )
    return Corpus(sentences=tuple(sentences), schema=schema, entity_type=entity_type)


def train_test_split(corpus: Corpus, n_test: int) -> tuple[Corpus, Corpus]:
    train = corpus.subset(range(len(corpus) - n_test))
    test = corpus.subset(range(len(corpus) - n_test, len(corpus)))
    return train, test


def random_token(rng: random.Random, max_len: int = 8) -> str:
    alphabet = "abcdefghijklmnopqrstuvwxyz-"
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(1, max_len)))


def random_sentence(rng: random.Random, sid: str, max_tokens: int = 25) -> Sentence:
    n = rng.randint(1, max_tokens)
    return Sentence(id=sid, tokens=tuple(random_token(rng) for _ in range(n)))
