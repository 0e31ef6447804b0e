"""Pipeline orchestration: per-PVP training, soft labeling, distillation.

A cell is one (k, seed) experiment: sample k training sentences, train
one scorer per pattern-verbalizer pair, soft-label the unlabeled pool
with the uniform-mean ensemble, distill a token classifier from the
soft labels, predict the test set, and score spans.  Every stage is a
pure function of (inputs, config, seed); reruns with the built-in
scorer are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bridge import BridgeScorer
from .corpus import Corpus, CorpusError, KShotSpec, Sentence, TagSchema, sample_k_shot, validate_tags
from .evaluation import SeedMetrics, span_prf
from .prng import shuffled_indices
from .pvp import PVP, expand_corpus, resolve_pvp
from .scoring import (
    DEFAULT_HASH_DIM,
    BaselineScorer,
    CSRFeatures,
    LinearSoftmaxModel,
    TrainConfig,
    epochs_for_shots,
    restricted_softmax_rows,
    token_features,
)

DEFAULT_EPOCH_SCHEDULE = {10: 10, 25: 7, 50: 5, 100: 5}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a cell needs besides the corpora.

    ``k`` and ``seed`` identify the active cell and are overwritten per
    cell by the runners; ``seeds`` drives multi-seed runs.
    """

    pattern_specs: tuple[str, ...] = ("p1", "p2")
    k: int = 25
    seeds: tuple[int, ...] = (1, 2, 3)
    seed: int = 0
    epoch_schedule: dict[int, int] = field(
        default_factory=lambda: dict(DEFAULT_EPOCH_SCHEDULE)
    )
    pvp_epochs: int | None = None
    unlabeled_cap: int = 10000
    shuffle_unlabeled: bool = True
    aggregation: str = "uniform"
    max_sequence_tokens: int = 128
    scorer: str = "builtin"
    window: int = 2
    hash_dim: int = DEFAULT_HASH_DIM
    pvp_lr: float = 0.5
    pvp_l2: float = 0.0
    pvp_batch_size: int | None = 4
    distill_epochs: int = 15
    distill_lr: float = 0.5
    distill_l2: float = 0.0
    distill_batch_size: int | None = 256
    distill_window: int = 2

    def __post_init__(self) -> None:
        if self.unlabeled_cap < 1:
            raise CorpusError("unlabeled_cap must be >= 1")
        if self.aggregation != "uniform":
            raise CorpusError(f"unknown aggregation {self.aggregation!r}")

    def pvps_for(self, corpus: Corpus) -> list[PVP]:
        return [resolve_pvp(spec, corpus.schema) for spec in self.pattern_specs]

    def epochs_for(self, k: int) -> int:
        if self.pvp_epochs is not None:
            return self.pvp_epochs
        return epochs_for_shots(k, self.epoch_schedule)


def config_payload(config: PipelineConfig, ks: Sequence[int] | None = None) -> dict:
    payload = {
        "pattern_specs": list(config.pattern_specs),
        "ks": sorted(ks) if ks is not None else [config.k],
        "seeds": list(config.seeds),
        "epoch_schedule": {str(k): v for k, v in sorted(config.epoch_schedule.items())},
        "pvp_epochs": config.pvp_epochs,
        "unlabeled_cap": config.unlabeled_cap,
        "shuffle_unlabeled": config.shuffle_unlabeled,
        "aggregation": config.aggregation,
        "max_sequence_tokens": config.max_sequence_tokens,
        "scorer": config.scorer,
        "window": config.window,
        "hash_dim": config.hash_dim,
        "pvp_lr": config.pvp_lr,
        "pvp_l2": config.pvp_l2,
        "pvp_batch_size": config.pvp_batch_size,
        "distill_epochs": config.distill_epochs,
        "distill_lr": config.distill_lr,
        "distill_l2": config.distill_l2,
        "distill_batch_size": config.distill_batch_size,
        "distill_window": config.distill_window,
    }
    return payload


def config_fingerprint(config: PipelineConfig, ks: Sequence[int] | None = None) -> str:
    canon = json.dumps(config_payload(config, ks), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class TrainedPvpScorer:
    pvp: PVP
    scorer: object
    losses: list[float]


def make_scorer_factory(config: PipelineConfig) -> Callable[[PVP], object]:
    """Build fresh scorers per PVP according to config.scorer."""
    if config.scorer == "builtin":
        def factory(pvp: PVP):
            return BaselineScorer.for_pvp(pvp, window=config.window, dim=config.hash_dim)

        return factory
    if config.scorer.startswith("bridge:"):
        address = config.scorer[len("bridge:") :]

        def factory(pvp: PVP):
            return BridgeScorer.connect_tcp(
                address, labels=pvp.schema.label_set, candidates=pvp.candidates()
            )

        return factory
    raise CorpusError(f"unknown scorer {config.scorer!r}")


def train_pvp_models(
    train: Corpus,
    config: PipelineConfig,
    scorer_factory: Callable[[PVP], object] | None = None,
) -> list[TrainedPvpScorer]:
    """Train one fresh scorer per PVP on the expanded training corpus."""
    if not train.tagged:
        raise PipelineError("train_pvp_models", "training corpus has no tags")
    pvps = config.pvps_for(train)
    if not pvps:
        raise PipelineError("train_pvp_models", "at least one PVP required")
    factory = scorer_factory or make_scorer_factory(config)
    try:
        epochs = config.epochs_for(config.k)
    except Exception as exc:
        raise PipelineError("train_pvp_models", str(exc)) from exc
    train_cfg = TrainConfig(
        epochs=epochs,
        lr=config.pvp_lr,
        l2=config.pvp_l2,
        batch_size=config.pvp_batch_size,
        seed=config.seed,
    )
    trained: list[TrainedPvpScorer] = []
    for pvp in pvps:
        examples = expand_corpus(
            pvp.pattern,
            train.sentences,
            train.entity_type,
            max_tokens=config.max_sequence_tokens,
        )
        pairs = [(ex, ex.gold_label) for ex in examples]
        scorer = factory(pvp)
        try:
            losses = scorer.train(pairs, train_cfg)
        except Exception as exc:
            raise PipelineError(
                "train_pvp_models", f"PVP {pvp.id!r}: {exc}"
            ) from exc
        trained.append(TrainedPvpScorer(pvp=pvp, scorer=scorer, losses=losses))
    return trained


@dataclass(eq=False)
class SoftSentence:
    id: str
    tokens: tuple[str, ...]
    probs: np.ndarray


@dataclass(eq=False)
class SoftLabeledDataset:
    """Per-token label distributions over an (untagged) sentence list."""

    labels: tuple[str, ...]
    sentences: tuple[SoftSentence, ...]

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def token_count(self) -> int:
        return sum(len(s.tokens) for s in self.sentences)


def soft_label(
    unlabeled: Corpus,
    scorers: Sequence[TrainedPvpScorer],
    config: PipelineConfig,
) -> SoftLabeledDataset:
    """Uniform-mean ensemble distributions over the first-cap sentences.

    The cap is a plain first-N truncation; callers that want an
    unbiased cap shuffle the pool beforehand (run_cell does, seeded).
    """
    if not scorers:
        raise PipelineError("soft_label", "at least one trained scorer required")
    capped = unlabeled.sentences[: config.unlabeled_cap]
    labels = scorers[0].pvp.schema.label_set
    lengths = [len(s.tokens) for s in capped]
    total = sum(lengths)
    mean_probs = np.zeros((total, len(labels)))
    for trained in scorers:
        try:
            examples = expand_corpus(
                trained.pvp.pattern,
                capped,
                unlabeled.entity_type,
                max_tokens=config.max_sequence_tokens,
            )
            logits = trained.scorer.score_batch(examples)
        except Exception as exc:
            raise PipelineError(
                "soft_label", f"scorer {trained.pvp.id!r}: {exc}"
            ) from exc
        mean_probs += restricted_softmax_rows(np.asarray(logits))
    mean_probs /= len(scorers)
    soft_sentences: list[SoftSentence] = []
    cursor = 0
    for sent, length in zip(capped, lengths):
        soft_sentences.append(
            SoftSentence(
                id=sent.id,
                tokens=sent.tokens,
                probs=mean_probs[cursor : cursor + length].copy(),
            )
        )
        cursor += length
    return SoftLabeledDataset(labels=labels, sentences=tuple(soft_sentences))


def write_soft_labels(dataset: SoftLabeledDataset, path: str | Path) -> None:
    """CoNLL-like dump: token plus one probability column per label."""
    path = Path(path)
    lines = ["#labels=" + "\t".join(dataset.labels)]
    for sent in dataset.sentences:
        lines.append(f"#id={sent.id}")
        for token, row in zip(sent.tokens, sent.probs):
            lines.append(token + "\t" + "\t".join(repr(float(p)) for p in row))
        lines.append("")
    payload = "\n".join(lines)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(payload, encoding="utf-8", newline="\n")
    tmp.replace(path)


def read_soft_labels(path: str | Path) -> SoftLabeledDataset:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#labels="):
        raise CorpusError(f"{path}: missing #labels= header")
    labels = tuple(lines[0][len("#labels=") :].split("\t"))
    sentences: list[SoftSentence] = []
    sid: str | None = None
    tokens: list[str] = []
    rows: list[list[float]] = []

    def flush() -> None:
        nonlocal sid, tokens, rows
        if tokens:
            sentences.append(
                SoftSentence(
                    id=sid if sid is not None else f"s{len(sentences)}",
                    tokens=tuple(tokens),
                    probs=np.asarray(rows, dtype=np.float64),
                )
            )
        sid, tokens, rows = None, [], []

    for line in lines[1:]:
        if line.startswith("#id="):
            sid = line[len("#id=") :]
            continue
        if not line.strip():
            flush()
            continue
        cells = line.split("\t")
        if len(cells) != len(labels) + 1:
            raise CorpusError(f"{path}: bad soft-label row {line!r}")
        tokens.append(cells[0])
        rows.append([float(c) for c in cells[1:]])
    flush()
    return SoftLabeledDataset(labels=labels, sentences=tuple(sentences))


class TokenClassifier:
    """Built-in final classifier: linear model over token context features."""

    def __init__(
        self,
        labels: Sequence[str],
        window: int = 2,
        dim: int = DEFAULT_HASH_DIM,
    ) -> None:
        self.window = window
        self.model = LinearSoftmaxModel(labels=labels, dim=dim)
        self._memo: dict[str, int] = {}

    @property
    def labels(self) -> tuple[str, ...]:
        return self.model.labels

    def featurize(self, sentences: Sequence[Sentence] | Sequence[SoftSentence]) -> CSRFeatures:
        def rows():
            for sent in sentences:
                for i in range(len(sent.tokens)):
                    yield token_features(sent.tokens, i, self.window)

        return CSRFeatures.build(rows(), dim=self.model.dim, memo=self._memo)

    def fit(self, dataset: SoftLabeledDataset, config: TrainConfig) -> list[float]:
        if not dataset.sentences:
            raise PipelineError("distill", "soft-labeled dataset is empty")
        csr = self.featurize(dataset.sentences)
        targets = np.concatenate([s.probs for s in dataset.sentences], axis=0)
        return self.model.fit(csr, targets, config)

    def predict_tags(self, sentence: Sentence) -> tuple[str, ...]:
        csr = self.featurize([sentence])
        logits = self.model.logits_matrix(csr)
        picks = np.argmax(logits, axis=1)
        return tuple(self.labels[int(p)] for p in picks)

    def save(self, path: str | Path) -> None:
        self.model.save(
            path, extra={"kind": "token-classifier", "window": self.window}
        )

    @classmethod
    def load(cls, path: str | Path) -> "TokenClassifier":
        model, extra = LinearSoftmaxModel.load(path)
        clf = cls(labels=model.labels, window=int(extra["window"]), dim=model.dim)
        clf.model = model
        return clf


class BridgeTokenClassifier:
    """Final classifier delegated over the wire protocol.

    Per-token requests render the sentence with a trailing mask token;
    the target token index travels out-of-band in target_position (see
    the protocol notes on tagging requests).
    """

    def __init__(self, bridge: BridgeScorer, schema: TagSchema) -> None:
        self.bridge = bridge
        self.schema = schema
        self.labels = schema.label_set

    @staticmethod
    def _token_example(sentence, index: int):
        from .pvp import ClozeExample, MASK_TOKEN

        tokens = tuple(sentence.tokens) + (MASK_TOKEN,)
        return ClozeExample(
            sentence_id=sentence.id,
            token_index=index,
            rendered_tokens=tokens,
            mask_index=len(tokens) - 1,
            focus_index=index,
        )

    def fit(self, dataset: SoftLabeledDataset, config: TrainConfig) -> list[float]:
        pairs = []
        for sent in dataset.sentences:
            for i in range(len(sent.tokens)):
                pairs.append((self._token_example(sent, i), sent.probs[i]))
        return self.bridge.train_soft(pairs, config)

    def predict_tags(self, sentence: Sentence) -> tuple[str, ...]:
        examples = [
            self._token_example(sentence, i) for i in range(len(sentence.tokens))
        ]
        logits = self.bridge.score_batch(examples)
        picks = np.argmax(logits, axis=1)
        return tuple(self.labels[int(p)] for p in picks)


def distill(
    soft: SoftLabeledDataset,
    config: PipelineConfig,
    classifier_factory: Callable[[], object] | None = None,
):
    """Train the final token classifier against the soft targets."""
    if not soft.sentences:
        raise PipelineError("distill", "soft-labeled dataset is empty")
    if classifier_factory is None:
        classifier = TokenClassifier(
            labels=soft.labels, window=config.distill_window, dim=config.hash_dim
        )
    else:
        classifier = classifier_factory()
    train_cfg = TrainConfig(
        epochs=config.distill_epochs,
        lr=config.distill_lr,
        l2=config.distill_l2,
        batch_size=config.distill_batch_size,
        seed=config.seed,
    )
    try:
        classifier.fit(soft, train_cfg)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("distill", str(exc)) from exc
    return classifier


def predict(classifier, corpus: Corpus) -> Corpus:
    """Tag every token (argmax, lowest-index ties) and repair to schema."""
    tagged: list[Sentence] = []
    for sent in corpus:
        raw = classifier.predict_tags(sent)
        repaired = validate_tags(
            replace(sent, tags=tuple(raw)), corpus.schema, repair=True
        )
        tagged.append(repaired)
    return replace(corpus, sentences=tuple(tagged))


def _strip_sample(pool: Corpus, sample: Corpus) -> Corpus:
    sampled_ids = {s.id for s in sample}
    keep = [i for i, s in enumerate(pool.sentences) if s.id not in sampled_ids]
    return pool.subset(keep).without_tags()


def run_cell(
    train_pool: Corpus,
    test: Corpus,
    config: PipelineConfig,
    k: int,
    seed: int,
    unlabeled: Corpus | None = None,
    cell_dir: Path | None = None,
) -> SeedMetrics:
    """One (k, seed) experiment; persists artifacts when cell_dir is set."""
    if k < 1:
        raise PipelineError(
            "sample", f"k={k} is degenerate; few-shot training needs k >= 1"
        )
    _check_compatible(train_pool, test)
    cfg = replace(config, k=k, seed=seed)
    try:
        sample = sample_k_shot(train_pool, KShotSpec(k=k, seed=seed))
    except CorpusError as exc:
        raise PipelineError("sample", str(exc)) from exc

    pool = unlabeled if unlabeled is not None else _strip_sample(train_pool, sample)
    pool = pool.without_tags()
    if cfg.shuffle_unlabeled and len(pool) > 1:
        pool = pool.subset(shuffled_indices(len(pool), seed))

    if cell_dir is not None:
        cell_dir.mkdir(parents=True, exist_ok=True)
        (cell_dir / "models").mkdir(exist_ok=True)

    scorers = train_pvp_models(sample, cfg)
    if cell_dir is not None:
        for trained in scorers:
            saver = getattr(trained.scorer, "save", None)
            if saver is not None:
                saver(cell_dir / "models" / f"pvp-{trained.pvp.id}.bin")

    soft = soft_label(pool, scorers, cfg)
    if cell_dir is not None:
        write_soft_labels(soft, cell_dir / "soft_labels.conll")

    classifier = distill(soft, cfg)
    if cell_dir is not None:
        saver = getattr(classifier, "save", None)
        if saver is not None:
            saver(cell_dir / "final_model.bin")

    try:
        predicted = predict(classifier, test)
    except Exception as exc:
        raise PipelineError("predict", str(exc)) from exc
    try:
        precision, recall, f1, support = span_prf(test, predicted)
    except Exception as exc:
        raise PipelineError("eval", str(exc)) from exc
    metrics = SeedMetrics(
        seed=seed, precision=precision, recall=recall, f1=f1, support=support
    )
    if cell_dir is not None:
        payload = json.dumps(metrics.as_dict(), sort_keys=True, indent=2)
        tmp = cell_dir / "metrics.json.tmp"
        tmp.write_text(payload + "\n", encoding="utf-8")
        tmp.replace(cell_dir / "metrics.json")
    return metrics


def _check_compatible(*corpora: Corpus) -> None:
    first = corpora[0]
    for other in corpora[1:]:
        if other.schema != first.schema or other.entity_type != first.entity_type:
            raise PipelineError(
                "setup",
                "corpora disagree on schema or entity type: "
                f"{first.schema.kind}/{first.entity_type} vs "
                f"{other.schema.kind}/{other.entity_type}",
            )


def run_pipeline(
    train: Corpus,
    unlabeled: Corpus | None,
    test: Corpus,
    config: PipelineConfig,
    run_dir: Path | None = None,
):
    """Multi-seed run at config.k; returns an EvalReport."""
    from .evaluation import run_protocol

    report = run_protocol(
        train,
        test,
        config,
        ks=[config.k],
        unlabeled=unlabeled,
        run_dir=run_dir,
    )
    eval_report = report.report_for(config.k)
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(eval_report.as_dict(), sort_keys=True, indent=2)
        tmp = run_dir / "report.json.tmp"
        tmp.write_text(payload + "\n", encoding="utf-8")
        tmp.replace(run_dir / "report.json")
    return eval_report
