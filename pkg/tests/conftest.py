import pytest

from clozetag.corpus import Corpus, Sentence, TagSchema


@pytest.fixture
def iob2() -> TagSchema:
    return TagSchema.iob2()


@pytest.fixture
def small_corpus(iob2) -> Corpus:
    sentences = (
        Sentence(id="s0", tokens=("colorectal", "cancer", "was", "found", "."),
                 tags=("B", "I", "O", "O", "O")),
        Sentence(id="s1", tokens=("no", "tumor", "detected", "."),
                 tags=("O", "B", "O", "O")),
        Sentence(id="s2", tokens=("chronic", "fatigue", "and", "anemia", "."),
                 tags=("B", "I", "O", "B", "O")),
    )
    return Corpus(sentences=sentences, schema=iob2, entity_type="disease")
