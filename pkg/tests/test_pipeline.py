import math

import numpy as np
import pytest

from clozetag.corpus import Corpus, Sentence, TagSchema
from clozetag.evaluation import run_protocol
from clozetag.pipeline import (
    PipelineConfig,
    PipelineError,
    SoftLabeledDataset,
    SoftSentence,
    TokenClassifier,
    TrainedPvpScorer,
    config_fingerprint,
    distill,
    predict,
    read_soft_labels,
    run_cell,
    run_pipeline,
    soft_label,
    train_pvp_models,
    write_soft_labels,
)
from clozetag.pvp import builtin_pvp
from clozetag.scoring import TrainConfig, restricted_softmax_rows

import synthcorpus


class FakeScorer:
    """Deterministic scorer emitting fixed per-position distributions."""

    def __init__(self, dist):
        self.dist = np.asarray(dist, dtype=np.float64)

    def score_batch(self, examples):
        return np.tile(np.log(self.dist), (len(examples), 1))

    def train(self, pairs, config):
        return [0.0]


def fake_trained(pvp, dist):
    return TrainedPvpScorer(pvp=pvp, scorer=FakeScorer(dist), losses=[0.0])


def tiny_corpus(n, tagged=True, id_prefix="u"):
    schema = TagSchema.iob2()
    sentences = tuple(
        Sentence(
            id=f"{id_prefix}{i}",
            tokens=("tok", "two"),
            tags=("O", "O") if tagged else None,
        )
        for i in range(n)
    )
    return Corpus(sentences=sentences, schema=schema, entity_type="disease")


class TestTrainPvpModels:
    def test_two_pvps_two_scorers(self):
        corpus = synthcorpus.generate_corpus(10, seed=1)
        config = PipelineConfig(k=10, seed=1)
        trained = train_pvp_models(corpus, config)
        assert len(trained) == 2
        assert [t.pvp.id for t in trained] == ["p1", "p2"]
        assert trained[0].scorer is not trained[1].scorer

    def test_ten_shot_uses_ten_epochs(self):
        corpus = synthcorpus.generate_corpus(10, seed=2)
        config = PipelineConfig(k=10, seed=1)
        trained = train_pvp_models(corpus, config)
        # fit() records the loss at every epoch start plus the final loss
        assert all(len(t.losses) == 11 for t in trained)

    def test_scorers_see_every_token(self):
        corpus = synthcorpus.generate_corpus(7, seed=3)
        total_tokens = sum(len(s) for s in corpus)
        seen = []

        class CountingScorer(FakeScorer):
            def __init__(self):
                super().__init__([0.4, 0.3, 0.3])

            def train(self, pairs, config):
                seen.append(len(pairs))
                return [0.0]

        config = PipelineConfig(k=10, seed=1)
        train_pvp_models(corpus, config, scorer_factory=lambda pvp: CountingScorer())
        assert seen == [total_tokens, total_tokens]

    def test_untagged_corpus_rejected(self):
        config = PipelineConfig(k=10)
        with pytest.raises(PipelineError, match="train_pvp_models"):
            train_pvp_models(tiny_corpus(3, tagged=False), config)

    def test_unscheduled_k_rejected(self):
        corpus = synthcorpus.generate_corpus(5, seed=4)
        config = PipelineConfig(k=33, seed=1)
        with pytest.raises(PipelineError):
            train_pvp_models(corpus, config)

    def test_epoch_override(self):
        corpus = synthcorpus.generate_corpus(5, seed=5)
        config = PipelineConfig(k=33, seed=1, pvp_epochs=2)
        trained = train_pvp_models(corpus, config)
        assert all(len(t.losses) == 3 for t in trained)

    def test_failure_names_pvp(self):
        corpus = synthcorpus.generate_corpus(4, seed=6)

        class FailingScorer(FakeScorer):
            def __init__(self):
                super().__init__([0.4, 0.3, 0.3])

            def train(self, pairs, config):
                raise RuntimeError("boom")

        config = PipelineConfig(k=10, seed=1)
        with pytest.raises(PipelineError, match="p1"):
            train_pvp_models(corpus, config, scorer_factory=lambda pvp: FailingScorer())


class TestSoftLabel:
    def test_single_pvp_exact_copy(self, iob2):
        pvp = builtin_pvp("p1", iob2)
        corpus = tiny_corpus(3, tagged=False)
        scorer = FakeScorer([0.6, 0.3, 0.1])
        dataset = soft_label(corpus, [TrainedPvpScorer(pvp, scorer, [0.0])], PipelineConfig())
        expected = restricted_softmax_rows(scorer.score_batch([None, None]))
        for sent in dataset.sentences:
            np.testing.assert_array_equal(sent.probs, expected)

    def test_two_pvp_uniform_mean(self, iob2):
        corpus = tiny_corpus(2, tagged=False)
        trained = [
            fake_trained(builtin_pvp("p1", iob2), [0.6, 0.3, 0.1]),
            fake_trained(builtin_pvp("p2", iob2), [0.2, 0.5, 0.3]),
        ]
        dataset = soft_label(corpus, trained, PipelineConfig())
        for sent in dataset.sentences:
            np.testing.assert_allclose(sent.probs, [[0.4, 0.4, 0.2]] * 2, atol=1e-12)

    def test_cap_enforced_exactly(self, iob2):
        corpus = tiny_corpus(30, tagged=False)
        trained = [fake_trained(builtin_pvp("p1", iob2), [0.5, 0.25, 0.25])]
        dataset = soft_label(corpus, trained, PipelineConfig(unlabeled_cap=10))
        assert len(dataset) == 10
        assert [s.id for s in dataset.sentences] == [f"u{i}" for i in range(10)]

    def test_distributions_sum_to_one(self, iob2):
        corpus = tiny_corpus(4, tagged=False)
        trained = [
            fake_trained(builtin_pvp("p1", iob2), [0.7, 0.2, 0.1]),
            fake_trained(builtin_pvp("p2", iob2), [0.1, 0.1, 0.8]),
        ]
        dataset = soft_label(corpus, trained, PipelineConfig())
        for sent in dataset.sentences:
            np.testing.assert_allclose(sent.probs.sum(axis=1), 1.0, atol=1e-9)

    def test_convex_combination_bounds(self, iob2):
        corpus = tiny_corpus(3, tagged=False)
        dists = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.05, 0.05, 0.9]]
        trained = [
            fake_trained(builtin_pvp("p1", iob2), d) for d in dists
        ]
        dataset = soft_label(corpus, trained, PipelineConfig())
        parts = np.asarray([restricted_softmax_rows(np.log(np.asarray([d]))) for d in dists])
        lower = parts.min(axis=0)[0]
        upper = parts.max(axis=0)[0]
        for sent in dataset.sentences:
            assert np.all(sent.probs >= lower - 1e-12)
            assert np.all(sent.probs <= upper + 1e-12)

    def test_scorer_failure_reports_progress(self, iob2):
        corpus = tiny_corpus(3, tagged=False)

        class Exploding(FakeScorer):
            def score_batch(self, examples):
                raise RuntimeError("dead scorer")

        trained = [TrainedPvpScorer(builtin_pvp("p1", iob2), Exploding([1, 1, 1]), [0.0])]
        with pytest.raises(PipelineError, match="soft_label"):
            soft_label(corpus, trained, PipelineConfig())

    def test_no_scorers_rejected(self, iob2):
        with pytest.raises(PipelineError):
            soft_label(tiny_corpus(1, tagged=False), [], PipelineConfig())


class TestSoftLabelsFile:
    def test_round_trip(self, tmp_path, iob2):
        corpus = tiny_corpus(3, tagged=False)
        trained = [
            fake_trained(builtin_pvp("p1", iob2), [0.6, 0.3, 0.1]),
            fake_trained(builtin_pvp("p2", iob2), [0.2, 0.5, 0.3]),
        ]
        dataset = soft_label(corpus, trained, PipelineConfig())
        path = tmp_path / "soft.conll"
        write_soft_labels(dataset, path)
        back = read_soft_labels(path)
        assert back.labels == dataset.labels
        assert len(back) == len(dataset)
        for a, b in zip(back.sentences, dataset.sentences):
            assert a.id == b.id
            assert a.tokens == b.tokens
            np.testing.assert_array_equal(a.probs, b.probs)


class TestDistill:
    def make_separable_soft(self, n=80):
        # one-hot targets keyed by the token itself: linearly separable
        labels = ("B", "I", "O")
        sentences = []
        for i in range(n):
            kind = i % 3
            tokens = ("alpha", "beta") if kind == 0 else (
                ("gamma", "delta") if kind == 1 else ("epsilon", "zeta")
            )
            probs = np.zeros((2, 3))
            probs[:, kind] = 1.0
            sentences.append(SoftSentence(id=f"d{i}", tokens=tokens, probs=probs))
        return SoftLabeledDataset(labels=labels, sentences=tuple(sentences))

    def test_separable_reaches_high_accuracy(self):
        soft = self.make_separable_soft()
        config = PipelineConfig(distill_epochs=30, seed=0)
        clf = distill(soft, config)
        correct = 0
        total = 0
        for sent in soft.sentences:
            want = np.argmax(sent.probs, axis=1)
            got = [soft.labels.index(t) for t in clf.predict_tags(
                Sentence(id=sent.id, tokens=sent.tokens)
            )]
            correct += int((np.asarray(got) == want).sum())
            total += len(sent.tokens)
        assert correct / total >= 0.99

    def test_deterministic_serialization(self, tmp_path):
        soft = self.make_separable_soft(30)
        config = PipelineConfig(distill_epochs=5, seed=3, hash_dim=4096)
        blobs = []
        for run in range(2):
            clf = distill(soft, config)
            path = tmp_path / f"clf{run}.bin"
            clf.save(path)
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]

    def test_uniform_targets_converge_to_entropy_bound(self):
        labels = ("B", "I", "O")
        sentences = tuple(
            SoftSentence(
                id=f"u{i}",
                tokens=("one", "two", "three"),
                probs=np.full((3, 3), 1 / 3),
            )
            for i in range(20)
        )
        soft = SoftLabeledDataset(labels=labels, sentences=sentences)
        clf = TokenClassifier(labels=labels, window=1, dim=512)
        rng = np.random.default_rng(5)
        clf.model.weights[:] = rng.normal(scale=0.3, size=clf.model.weights.shape)
        losses = clf.fit(soft, TrainConfig(epochs=300, lr=1.0))
        assert losses[-1] == pytest.approx(math.log(3.0), abs=1e-4)
        assert losses[-1] <= losses[0]

    def test_empty_dataset_rejected(self):
        soft = SoftLabeledDataset(labels=("B", "I", "O"), sentences=())
        with pytest.raises(PipelineError, match="distill"):
            distill(soft, PipelineConfig())


class TestPredict:
    def test_empty_corpus(self, iob2):
        clf = TokenClassifier(labels=iob2.label_set, dim=64)
        empty = Corpus(sentences=(), schema=iob2, entity_type="disease")
        assert len(predict(clf, empty)) == 0

    def test_repair_applied(self, iob2):
        class RawClassifier:
            labels = iob2.label_set

            def predict_tags(self, sentence):
                return ("I",) * len(sentence.tokens)

        corpus = tiny_corpus(1, tagged=False)
        out = predict(RawClassifier(), corpus)
        assert out.sentences[0].tags == ("B", "I")

    def test_output_lengths_match(self, iob2):
        corpus = synthcorpus.generate_corpus(20, seed=9).without_tags()
        clf = TokenClassifier(labels=iob2.label_set, dim=256)
        out = predict(clf, corpus)
        for src, dst in zip(corpus, out):
            assert len(dst.tags) == len(src.tokens)

    def test_zero_model_predicts_first_label_repaired(self, iob2):
        # all-zero logits tie; argmax picks the lowest label index (B),
        # which is already schema-valid everywhere
        clf = TokenClassifier(labels=iob2.label_set, dim=64)
        corpus = tiny_corpus(1, tagged=False)
        out = predict(clf, corpus)
        assert out.sentences[0].tags == ("B", "B")


@pytest.fixture(scope="module")
def split():
    corpus = synthcorpus.generate_corpus(260, seed=21)
    return synthcorpus.train_test_split(corpus, 60)


class TestRunCellAndPipeline:
    def quick_config(self, **kw):
        defaults = dict(
            k=10,
            seeds=(1, 2, 3),
            distill_epochs=4,
            hash_dim=1 << 14,
            unlabeled_cap=150,
        )
        defaults.update(kw)
        return PipelineConfig(**defaults)

    def test_k_zero_refused(self, split):
        train, test = split
        with pytest.raises(PipelineError, match="degenerate"):
            run_cell(train, test, self.quick_config(), k=0, seed=1)

    def test_cell_metrics_and_artifacts(self, tmp_path, split):
        train, test = split
        cell_dir = tmp_path / "cell"
        metrics = run_cell(
            train, test, self.quick_config(), k=10, seed=1, cell_dir=cell_dir
        )
        assert 0.0 <= metrics.f1 <= 1.0
        assert (cell_dir / "models" / "pvp-p1.bin").exists()
        assert (cell_dir / "models" / "pvp-p2.bin").exists()
        assert (cell_dir / "soft_labels.conll").exists()
        assert (cell_dir / "final_model.bin").exists()
        assert (cell_dir / "metrics.json").exists()

    def test_schema_mismatch_rejected(self, split):
        train, _ = split
        other = Corpus(
            sentences=(Sentence(id="x", tokens=("a",), tags=("O",)),),
            schema=train.schema,
            entity_type="gene",
        )
        with pytest.raises(PipelineError, match="setup"):
            run_cell(train, other, self.quick_config(), k=10, seed=1)

    def test_run_pipeline_three_seeds(self, tmp_path, split):
        train, test = split
        report = run_pipeline(
            train, None, test, self.quick_config(), run_dir=tmp_path / "run"
        )
        assert len(report.per_seed) == 3
        assert {m.seed for m in report.per_seed} == {1, 2, 3}
        assert (tmp_path / "run" / "report.json").exists()
        payload = report.as_dict()
        assert "mean" in payload["summary"]["f1"]
        assert "std" in payload["summary"]["f1"]

    def test_deterministic_rerun(self, split):
        train, test = split
        config = self.quick_config(seeds=(1, 2))
        a = run_pipeline(train, None, test, config)
        b = run_pipeline(train, None, test, config)
        assert a == b

    def test_external_unlabeled_pool(self, split):
        train, test = split
        pool = synthcorpus.generate_corpus(100, seed=77, id_prefix="x").without_tags()
        config = self.quick_config(seeds=(1,))
        report = run_pipeline(train, pool, test, config)
        assert len(report.per_seed) == 1

    def test_protocol_grid_and_keep_going(self, split):
        train, test = split
        config = self.quick_config(seeds=(1, 2))
        report = run_protocol(train, test, config, ks=[10, 25])
        assert len(report.cells) == 4
        assert report.ks() == [10, 25]
        assert not report.failed_cells
        curve = report.to_curve_csv().strip().splitlines()
        assert curve[0] == "k,seed,precision,recall,f1"
        assert len(curve) == 5

    def test_keep_going_records_failures(self, split):
        train, test = split
        config = self.quick_config(seeds=(1,))
        report = run_protocol(train, test, config, ks=[10, 33], keep_going=True)
        failed = report.failed_cells
        assert len(failed) == 1
        assert failed[0].k == 33
        assert "33" in failed[0].error

    def test_failure_propagates_without_keep_going(self, split):
        train, test = split
        config = self.quick_config(seeds=(1,))
        with pytest.raises(PipelineError):
            run_protocol(train, test, config, ks=[33])

    def test_parallel_matches_serial(self, split):
        train, test = split
        config = self.quick_config(seeds=(1, 2))
        serial = run_protocol(train, test, config, ks=[10])
        parallel = run_protocol(train, test, config, ks=[10], workers=2)
        assert serial.as_dict() == parallel.as_dict()


class TestConfigFingerprint:
    def test_stable_and_sensitive(self):
        a = PipelineConfig()
        b = PipelineConfig()
        assert config_fingerprint(a) == config_fingerprint(b)
        c = PipelineConfig(unlabeled_cap=5)
        assert config_fingerprint(a) != config_fingerprint(c)
