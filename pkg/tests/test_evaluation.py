import random

import pytest
from hypothesis import given, strategies as st

from clozetag.corpus import Corpus, Sentence, TagSchema
from clozetag.evaluation import (
    EntitySpan,
    EvalError,
    EvalReport,
    SeedMetrics,
    extract_spans,
    corpus_spans,
    mean_std,
    span_prf,
    spans_to_tags,
)

import oracles


def sent(tags, sid="s0"):
    return Sentence(id=sid, tokens=tuple(f"w{i}" for i in range(len(tags))), tags=tuple(tags))


def corpus_from(tag_lists, schema=None, entity_type="disease"):
    schema = schema or TagSchema.iob2()
    return Corpus(
        sentences=tuple(sent(tags, sid=f"s{i}") for i, tags in enumerate(tag_lists)),
        schema=schema,
        entity_type=entity_type,
    )


class TestExtractSpans:
    def test_two_spans(self, iob2):
        spans = extract_spans(sent(["B", "I", "O", "B"]), iob2, "disease")
        assert [(s.start, s.end) for s in spans] == [(0, 1), (3, 3)]

    def test_no_spans(self, iob2):
        assert extract_spans(sent(["O", "O", "O"]), iob2, "disease") == []

    def test_adjacent_b(self, iob2):
        spans = extract_spans(sent(["B", "B", "I"]), iob2, "disease")
        assert [(s.start, s.end) for s in spans] == [(0, 0), (1, 2)]

    def test_io_schema_runs(self):
        io = TagSchema.io()
        spans = extract_spans(sent(["I", "I", "O", "I"]), io, "gene")
        assert [(s.start, s.end) for s in spans] == [(0, 1), (3, 3)]
        oracle = oracles.brute_force_spans_io(["I", "I", "O", "I"])
        assert [(s.start, s.end) for s in spans] == oracle

    def test_invalid_sequence_rejected(self, iob2):
        from clozetag.corpus import TagSequenceError

        with pytest.raises(TagSequenceError):
            extract_spans(sent(["O", "I"]), iob2, "disease")

    def test_untagged_rejected(self, iob2):
        from clozetag.corpus import TagSequenceError

        bare = Sentence(id="s0", tokens=("a",))
        with pytest.raises(TagSequenceError):
            extract_spans(bare, iob2, "disease")

    def test_matches_brute_force_on_random_sequences(self, iob2):
        rng = random.Random(99)
        for _ in range(1000):
            tags = oracles.random_valid_iob2(rng, rng.randint(1, 20))
            got = [(s.start, s.end) for s in extract_spans(sent(tags), iob2, "d")]
            assert got == oracles.brute_force_spans_iob2(tags)

    @given(st.lists(st.sampled_from(["B", "I", "O"]), min_size=1, max_size=20))
    def test_round_trip_encode_decode(self, tags):
        iob2 = TagSchema.iob2()
        if not iob2.is_valid_sequence(tags):
            tags = oracles.spans_to_iob2(oracles.repair_spans(tags), len(tags))
        spans = extract_spans(sent(tags), iob2, "d")
        encoded = spans_to_tags(spans, len(tags), iob2)
        assert list(encoded) == list(tags)


class TestSpanPrf:
    def test_identity(self, iob2):
        gold = corpus_from([["B", "I", "O"], ["O", "B", "O"]])
        p, r, f1, support = span_prf(gold, gold)
        assert (p, r, f1, support) == (1.0, 1.0, 1.0, 2)

    def test_half_overlap(self, iob2):
        gold = corpus_from([["B", "I", "O", "B"]])
        pred = corpus_from([["B", "I", "O", "O"]])
        pred = Corpus(
            sentences=(
                Sentence(id="s0", tokens=pred.sentences[0].tokens, tags=("B", "I", "B", "O")),
            ),
            schema=gold.schema,
            entity_type="disease",
        )
        p, r, f1, support = span_prf(gold, pred)
        assert p == 0.5 and r == 0.5 and f1 == 0.5 and support == 2

    def test_empty_prediction(self, iob2):
        gold = corpus_from([["B", "O"]])
        pred = corpus_from([["O", "O"]])
        p, r, f1, support = span_prf(gold, pred)
        assert (p, r, f1) == (0.0, 0.0, 0.0)
        assert support == 1

    def test_symmetry_swaps_p_and_r(self, iob2):
        rng = random.Random(4)
        gold = corpus_from(
            [oracles.random_valid_iob2(rng, 12) for _ in range(6)]
        )
        pred = corpus_from(
            [oracles.random_valid_iob2(rng, 12) for _ in range(6)]
        )
        p1, r1, f1a, _ = span_prf(gold, pred)
        p2, r2, f1b, _ = span_prf(pred, gold)
        assert p1 == pytest.approx(r2)
        assert r1 == pytest.approx(p2)
        assert f1a == pytest.approx(f1b)

    def test_matches_reference_on_random_corpora(self, iob2):
        rng = random.Random(31)
        for _ in range(1000):
            n = rng.randint(1, 10)
            lengths = [rng.randint(1, 20) for _ in range(n)]
            gold = corpus_from([oracles.random_valid_iob2(rng, ln) for ln in lengths])
            pred = corpus_from([oracles.random_valid_iob2(rng, ln) for ln in lengths])
            p, r, f1, _ = span_prf(gold, pred)
            gold_set = {
                (f"s{i}",) + span
                for i, s in enumerate(gold)
                for span in oracles.brute_force_spans_iob2(s.tags)
            }
            pred_set = {
                (f"s{i}",) + span
                for i, s in enumerate(pred)
                for span in oracles.brute_force_spans_iob2(s.tags)
            }
            ep, er, ef = oracles.reference_prf(gold_set, pred_set)
            assert (p, r, f1) == (ep, er, ef)

    def test_shuffling_both_identically_leaves_metrics(self, iob2):
        rng = random.Random(8)
        lengths = [rng.randint(1, 15) for _ in range(10)]
        gold = corpus_from([oracles.random_valid_iob2(rng, ln) for ln in lengths])
        pred = corpus_from([oracles.random_valid_iob2(rng, ln) for ln in lengths])
        base = span_prf(gold, pred)
        order = list(range(10))
        rng.shuffle(order)
        assert span_prf(gold.subset(order), pred.subset(order)) == base

    def test_size_mismatch(self, iob2):
        gold = corpus_from([["B", "O"]])
        pred = corpus_from([["B", "O"], ["O"]])
        with pytest.raises(EvalError):
            span_prf(gold, pred)

    def test_id_mismatch_names_sentence(self, iob2):
        gold = corpus_from([["B", "O"]])
        pred = Corpus(
            sentences=(Sentence(id="zz", tokens=("a", "b"), tags=("B", "O")),),
            schema=gold.schema,
            entity_type="disease",
        )
        with pytest.raises(EvalError, match="zz"):
            span_prf(gold, pred)

    def test_token_count_mismatch(self, iob2):
        gold = corpus_from([["B", "O"]])
        pred = Corpus(
            sentences=(Sentence(id="s0", tokens=("a",), tags=("B",)),),
            schema=gold.schema,
            entity_type="disease",
        )
        with pytest.raises(EvalError):
            span_prf(gold, pred)


class TestMeanStd:
    def test_constant_series(self):
        mean, std = mean_std([0.2, 0.2, 0.2])
        assert mean == pytest.approx(0.2)
        assert std == 0.0

    def test_population_std(self):
        mean, std = mean_std([0.0, 0.2, 0.4])
        ref_mean, ref_std = oracles.reference_mean_population_std([0.0, 0.2, 0.4])
        assert mean == pytest.approx(ref_mean, abs=1e-15)
        assert std == pytest.approx(ref_std, abs=1e-15)
        assert std == pytest.approx(0.16329931618554522, abs=1e-12)


class TestEvalReport:
    def test_summary_matches_reference(self):
        per_seed = tuple(
            SeedMetrics(seed=s, precision=p, recall=r, f1=f, support=10)
            for s, (p, r, f) in enumerate(
                [(0.5, 0.4, 0.444444), (0.6, 0.5, 0.545455), (0.7, 0.6, 0.646154)]
            )
        )
        report = EvalReport(k=10, per_seed=per_seed)
        payload = report.as_dict()
        for name in ("precision", "recall", "f1"):
            values = [getattr(m, name) for m in per_seed]
            ref_mean, ref_std = oracles.reference_mean_population_std(values)
            assert payload["summary"][name]["mean"] == pytest.approx(ref_mean, abs=1e-15)
            assert payload["summary"][name]["std"] == pytest.approx(ref_std, abs=1e-15)

    def test_invariant_bounds(self):
        metrics = SeedMetrics(seed=1, precision=0.5, recall=0.25, f1=1 / 3, support=4)
        report = EvalReport(k=25, per_seed=(metrics,))
        assert 0.0 <= report.mean("f1") <= 1.0


class TestEntitySpanInvariants:
    def test_bad_bounds_rejected(self):
        with pytest.raises(ValueError):
            EntitySpan(sentence_id="s0", start=3, end=1, type="d")

    def test_corpus_spans_by_id(self, iob2):
        corpus = corpus_from([["B", "O"], ["B", "I"]])
        spans = corpus_spans(corpus)
        assert spans == {
            EntitySpan("s0", 0, 0, "disease"),
            EntitySpan("s1", 0, 1, "disease"),
        }
