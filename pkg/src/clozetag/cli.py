"""Command-line surface: expand, run-experiment, eval, stats.

Exit codes: 0 success, 1 runtime failure (bad input data, failed
cells), 2 usage or configuration error.  All randomness flows from
--seeds; reports contain no timestamps, so identical manifests produce
byte-identical reports.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, kernels
from .bridge import BridgeError
from .corpus import Corpus, CorpusError, TagSchema, read_conll, stats_json
from .evaluation import EvalError, run_protocol, span_prf
from .pipeline import (
    DEFAULT_EPOCH_SCHEDULE,
    PipelineConfig,
    PipelineError,
    config_fingerprint,
    config_payload,
)
from .pvp import PatternError, expand_corpus, resolve_pvp

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    tmp.replace(path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_corpus(path: str, schema: TagSchema, entity_type: str, tagged: bool = True) -> Corpus:
    return read_conll(Path(path), schema, entity_type=entity_type, tagged=tagged)


def _int_list(raw: str) -> list[int]:
    try:
        return [int(piece) for piece in raw.split(",") if piece.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {raw!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clozetag",
        description="Few-shot NER via per-token cloze questions",
    )
    parser.add_argument("--version", action="version", version=f"clozetag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_corpus_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--schema", default="IOB2", help="IO or IOB2 (default IOB2)")
        p.add_argument(
            "--entity-type", default="entity", help="entity type substituted into patterns"
        )

    p_expand = sub.add_parser("expand", help="render per-token cloze examples")
    p_expand.add_argument("--corpus", required=True)
    p_expand.add_argument("--pattern", default="p1", help="p1, p2, or a pattern file path")
    p_expand.add_argument("--out", default="-", help="output JSONL path (default stdout)")
    p_expand.add_argument("--max-seq", type=int, default=None)
    add_corpus_flags(p_expand)

    p_run = sub.add_parser("run-experiment", help="run the k-shot experiment grid")
    p_run.add_argument("--train", required=True)
    p_run.add_argument("--test", required=True)
    p_run.add_argument("--unlabeled", default=None)
    p_run.add_argument("--k", type=_int_list, default=None, help="comma-separated shot counts")
    p_run.add_argument("--seeds", type=_int_list, default=[1, 2, 3])
    p_run.add_argument(
        "--pattern",
        action="append",
        default=None,
        help="repeatable; p1, p2, or pattern file paths (default: p1 and p2)",
    )
    p_run.add_argument("--scorer", default="builtin", help="builtin or bridge:<host:port>")
    p_run.add_argument("--out", required=True, help="run directory")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--keep-going", action="store_true")
    p_run.add_argument("--epochs", type=int, default=None, help="override the epoch schedule")
    p_run.add_argument("--unlabeled-cap", type=int, default=10000)
    p_run.add_argument("--max-seq", type=int, default=128)
    p_run.add_argument("--distill-epochs", type=int, default=15)
    add_corpus_flags(p_run)

    p_eval = sub.add_parser("eval", help="entity-level precision/recall/F1")
    p_eval.add_argument("--gold", required=True)
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--format", choices=("json", "table"), default="table")
    add_corpus_flags(p_eval)

    p_stats = sub.add_parser("stats", help="corpus statistics as JSON")
    p_stats.add_argument("--corpus", required=True)
    p_stats.add_argument("--format", choices=("json",), default="json")
    add_corpus_flags(p_stats)

    return parser


def cmd_expand(args: argparse.Namespace) -> int:
    schema = TagSchema.from_name(args.schema)
    try:
        pvp = resolve_pvp(args.pattern, schema)
    except PatternError as exc:
        print(f"clozetag: pattern error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    corpus = _load_corpus(args.corpus, schema, args.entity_type)
    examples = expand_corpus(
        pvp.pattern, corpus.sentences, corpus.entity_type, max_tokens=args.max_seq
    )
    records = []
    for ex in examples:
        records.append(
            json.dumps(
                {
                    "sentence_id": ex.sentence_id,
                    "token_index": ex.token_index,
                    "pattern": pvp.id,
                    "rendered_text": ex.rendered_text,
                    "rendered_tokens": list(ex.rendered_tokens),
                    "mask_index": ex.mask_index,
                    "gold_label": ex.gold_label,
                },
                sort_keys=True,
            )
        )
    payload = "\n".join(records) + "\n"
    if args.out == "-":
        sys.stdout.write(payload)
    else:
        _write_atomic(Path(args.out), payload)
    return 0


def cmd_run_experiment(args: argparse.Namespace) -> int:
    schema = TagSchema.from_name(args.schema)
    patterns = tuple(args.pattern) if args.pattern else ("p1", "p2")
    try:
        config = PipelineConfig(
            pattern_specs=patterns,
            seeds=tuple(args.seeds),
            pvp_epochs=args.epochs,
            unlabeled_cap=args.unlabeled_cap,
            max_sequence_tokens=args.max_seq,
            distill_epochs=args.distill_epochs,
            scorer=args.scorer,
        )
        for spec in patterns:
            resolve_pvp(spec, schema)
    except (PatternError, CorpusError) as exc:
        print(f"clozetag: config error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    train = _load_corpus(args.train, schema, args.entity_type)
    test = _load_corpus(args.test, schema, args.entity_type)
    unlabeled = None
    if args.unlabeled:
        unlabeled = _load_corpus(args.unlabeled, schema, args.entity_type, tagged=False)
    ks = args.k if args.k else sorted(DEFAULT_EPOCH_SCHEDULE)

    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    inputs = {"train": args.train, "test": args.test}
    if args.unlabeled:
        inputs["unlabeled"] = args.unlabeled
    manifest = {
        "tool": "clozetag",
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "kernel_backend": kernels.BACKEND,
        "config": config_payload(config, ks=ks),
        "config_fingerprint": config_fingerprint(config, ks=ks),
        "schema": schema.kind,
        "entity_type": args.entity_type,
        "inputs": {
            name: {"path": str(path), "sha256": _sha256(Path(path))}
            for name, path in inputs.items()
        },
        "workers": args.workers,
    }
    _write_atomic(run_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    _write_atomic(
        run_dir / "config.json",
        json.dumps(config_payload(config, ks=ks), sort_keys=True, indent=2) + "\n",
    )

    report = run_protocol(
        train,
        test,
        config,
        ks=ks,
        unlabeled=unlabeled,
        workers=args.workers,
        run_dir=run_dir,
        keep_going=args.keep_going,
    )
    _write_atomic(run_dir / "report.json", report.to_json() + "\n")
    _write_atomic(run_dir / "report.txt", report.to_table())
    _write_atomic(run_dir / "curve.csv", report.to_curve_csv())
    sys.stdout.write(report.to_table())
    if report.failed_cells:
        for cell in report.failed_cells:
            print(
                f"clozetag: cell k={cell.k} seed={cell.seed} failed: {cell.error}",
                file=sys.stderr,
            )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    schema = TagSchema.from_name(args.schema)
    gold = _load_corpus(args.gold, schema, args.entity_type)
    pred = _load_corpus(args.pred, schema, args.entity_type)
    precision, recall, f1, support = span_prf(gold, pred)
    if args.format == "json":
        print(
            json.dumps(
                {
                    "precision": precision,
                    "recall": recall,
                    "f1": f1,
                    "support": support,
                },
                sort_keys=True,
            )
        )
    else:
        print(f"precision {precision:.4f}")
        print(f"recall    {recall:.4f}")
        print(f"f1        {f1:.4f}")
        print(f"support   {support}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    schema = TagSchema.from_name(args.schema)
    corpus = _load_corpus(args.corpus, schema, args.entity_type)
    print(stats_json(corpus))
    return 0


_HANDLERS = {
    "expand": cmd_expand,
    "run-experiment": cmd_run_experiment,
    "eval": cmd_eval,
    "stats": cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = _HANDLERS[args.command]
    try:
        return handler(args)
    except (CorpusError, EvalError) as exc:
        print(f"clozetag: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except (PipelineError, BridgeError) as exc:
        print(f"clozetag: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except FileNotFoundError as exc:
        print(f"clozetag: file not found: {exc.filename}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
