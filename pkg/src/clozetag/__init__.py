"""Few-shot named-entity recognition via per-token cloze questions.

Sentences expand into one cloze question per token; a scorer per
pattern-verbalizer pair rates the verbalizer tokens at the mask
position; the ensemble's averaged distributions soft-label unlabeled
text; a final token classifier is distilled from the soft labels and
evaluated at the entity-span level.
"""

__version__ = "0.1.0"

from .corpus import (
    Corpus,
    CorpusError,
    KShotSpec,
    Sentence,
    TagSchema,
    corpus_stats,
    read_conll,
    sample_k_shot,
    validate_tags,
    write_conll,
)
from .evaluation import EntitySpan, EvalReport, extract_spans, run_protocol, span_prf
from .pipeline import (
    PipelineConfig,
    SoftLabeledDataset,
    TokenClassifier,
    distill,
    predict,
    run_pipeline,
    soft_label,
    train_pvp_models,
)
from .pvp import PVP, ClozeExample, Pattern, Verbalizer, builtin_pvps, expand, render
from .scoring import (
    BaselineScorer,
    ScoreRequest,
    TrainConfig,
    gradient_check,
    restricted_softmax,
)

__all__ = [
    "Corpus",
    "CorpusError",
    "KShotSpec",
    "Sentence",
    "TagSchema",
    "corpus_stats",
    "read_conll",
    "sample_k_shot",
    "validate_tags",
    "write_conll",
    "EntitySpan",
    "EvalReport",
    "extract_spans",
    "run_protocol",
    "span_prf",
    "PipelineConfig",
    "SoftLabeledDataset",
    "TokenClassifier",
    "distill",
    "predict",
    "run_pipeline",
    "soft_label",
    "train_pvp_models",
    "PVP",
    "ClozeExample",
    "Pattern",
    "Verbalizer",
    "builtin_pvps",
    "expand",
    "render",
    "BaselineScorer",
    "ScoreRequest",
    "TrainConfig",
    "gradient_check",
    "restricted_softmax",
    "__version__",
]
