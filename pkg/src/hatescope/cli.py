"""Command-line entry point: ``python -m hatescope <subcommand>``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import attribution, pipeline, reducer, synth
from .corpus import CorpusError, class_distribution
from .detector import TrainedDetector, TrainingError
from .encoder import EncoderError, load_encoder, save_encoder
from .evaluation import (
    EvaluationError,
    agreement,
    classification_metrics,
    format_table,
    jaccard_summary,
    likert_ingest,
)

OUTPUT_DIR_ENV = "HATESCOPE_OUTPUT_DIR"
LOG_LEVEL_ENV = "HATESCOPE_LOG_LEVEL"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STAGE = 0, 1, 2, 3

log = logging.getLogger("hatescope")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _output_dir(flag: str | None, default: str = "runs/default") -> str:
    return flag or os.environ.get(OUTPUT_DIR_ENV) or default


def _config_from_args(args, extra: dict[str, str | None]) -> pipeline.RunConfig:
    overrides = dict(args.set or [])
    overrides.update({k: str(v) for k, v in extra.items() if v is not None})
    if args.out is None and OUTPUT_DIR_ENV in os.environ:
        overrides["output_dir"] = os.environ[OUTPUT_DIR_ENV]
    return pipeline.load_config(args.config, overrides)


def _write_records(records, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        pipeline.write_jsonl(Path(out), records)
    else:
        for rec in records:
            sys.stdout.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    s = synth.generate(args.size, args.trigger_rate, args.seed, args.double_rate)
    out = Path(args.out or Path(_output_dir(None)) / "synth.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    s.save(out)
    counts = class_distribution(s.corpus)
    print(f"{out}: {len(s.corpus)} comments, {counts.hate} hate, {counts.non_hate} non-hate")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config_from_args(args, {"data.path": args.data, "data.format": args.format,
                                      "output_dir": args.out, "cv_folds": args.cv_folds, "seed": args.seed})
    config.validate()
    corpus, _ = pipeline.load_data(config.data.path, config.data.format)
    detector, mlm, cv = pipeline.train_models(config, corpus)
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    detector.save(pipeline._fresh_dir(root / "detector"))
    save_encoder(mlm, pipeline._fresh_dir(root / "mlm"))
    (root / "config.txt").write_text(config.dumps(), encoding="utf-8")
    if cv is not None:
        pipeline.write_json(root / "cv.json", pipeline.cv_report(cv))
        print(format_table({corpus.name: cv.summary}))
    print(f"detector saved to {root / 'detector'} (best epoch {detector.best_epoch})")
    return EXIT_OK


def cmd_detect(args) -> int:
    detector = TrainedDetector.load(args.detector)
    corpus, _ = pipeline.load_data(args.data, args.format)
    _write_records(pipeline.classification_records(detector, corpus), args.out)
    return EXIT_OK


def _ig_config(args) -> attribution.IGConfig:
    return attribution.IGConfig(steps=args.steps, quadrature=args.quadrature, k=args.k,
                                reduction=args.reduction, baseline=args.baseline)


def cmd_attribute(args) -> int:
    detector = TrainedDetector.load(args.detector)
    if args.classification:
        classified = pipeline.read_jsonl(args.classification)
    else:
        corpus, _ = pipeline.load_data(args.data, args.format)
        classified = pipeline.classification_records(detector, corpus)
    result = pipeline.attribute_stage(detector, classified, _ig_config(args))
    _write_records(result.records, args.out)
    return _report_failures(result.failures)


def cmd_reduce(args) -> int:
    detector = TrainedDetector.load(args.detector)
    mlm = load_encoder(args.mlm)
    scorer = mlm if args.scorer == "mlm" else detector.encoder
    config = reducer.ReducerConfig(args.mask_fraction, args.candidates)
    attributed = pipeline.read_jsonl(args.attributions)
    for rec in attributed:
        for key in ("id", "text", "top_words"):
            if key not in rec:
                raise CorpusError(f"{args.attributions}: record without {key!r}")
    result = pipeline.reduce_stage(detector, mlm, attributed, config, scorer)
    _write_records(result.records, args.out)
    return _report_failures(result.failures)


def _report_failures(failures) -> int:
    for f in failures:
        log.error("%s failed for %s: %s", f["stage"], f["id"], f["error"])
    return EXIT_STAGE if failures else EXIT_OK


def cmd_pipeline(args) -> int:
    config = _config_from_args(args, {"data.path": args.data, "data.format": args.format,
                                      "output_dir": args.out, "seed": args.seed})
    record = pipeline.run_pipeline(config)
    print(json.dumps({"run_id": record.run_id, "directory": str(record.directory),
                      "skipped": record.skipped, "failures": len(record.failures),
                      "summary": record.summary}, indent=2, sort_keys=True))
    return _report_failures(record.failures)


def cmd_evaluate(args) -> int:
    report: dict = {}
    classification = args.classification
    attributions = args.attributions
    if args.run:
        run = Path(args.run)
        classification = classification or run / pipeline.DUMPS["classify"]
        attributions = attributions or run / pipeline.DUMPS["attribute"]
    if not any((classification, attributions, args.ratings)):
        raise UsageError("evaluate: give --run, --classification, --attributions or --ratings")
    if classification:
        recs = pipeline.read_jsonl(classification)
        try:
            preds = [r["label"] for r in recs]
            golds = [r["gold"] for r in recs]
        except KeyError as exc:
            raise EvaluationError(f"{classification}: record without {exc.args[0]!r}") from None
        metrics = classification_metrics(preds, golds)
        report["detection"] = metrics.as_dict()
        print(f"accuracy {metrics.accuracy:.4f}  macro-F1 {metrics.f1_macro:.4f}  micro-F1 {metrics.f1_micro:.4f}")
    if attributions and (args.planted or args.words):
        attributed = {r["id"]: {h["word"] for h in r["top_words"]} for r in pipeline.read_jsonl(attributions)}
        if args.planted:
            truth = {k: set(v) for k, v in synth.SyntheticCorpus.load(args.planted).planted.items() if v}
        else:
            truth = {r.comment_id: set(r.words) for r in likert_ingest(args.words) if r.words is not None}
        pairs = [(attributed[cid], words) for cid, words in sorted(truth.items()) if cid in attributed]
        j = jaccard_summary(pairs)
        report["jaccard"] = {"per_item_mean": j.per_item_mean, "pooled": j.pooled, "items": j.items}
        print(f"jaccard per-item {j.per_item_mean:.3f}  pooled {j.pooled:.3f}  over {j.items} comments")
    if args.ratings:
        a = agreement(likert_ingest(args.ratings))
        report["agreement"] = {
            "annotator_means": a.annotator_means,
            "pairwise": {f"{x}|{y}": r for (x, y), r in a.pairwise.items()},
            "pooled": a.pooled,
        }
        print(f"pearson pooled {a.pooled:.3f}")
    if args.out:
        pipeline.write_json(Path(args.out), report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hatescope", description="Hate context detection and hate intensity reduction.")
    p.add_argument("--log-level", default=None, help=f"overrides ${LOG_LEVEL_ENV} (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_options(q):
        q.add_argument("--config", help="flat key = value config file")
        q.add_argument("--set", action="append", type=_key_value, metavar="KEY=VALUE",
                       help="override one config key; repeatable")
        q.add_argument("--data", help="config key data.path")
        q.add_argument("--format", help="config key data.format")
        q.add_argument("--out", help="config key output_dir")
        q.add_argument("--seed", type=int, help="config key seed")

    q = sub.add_parser("synth", help="generate the synthetic trigger-lexicon corpus")
    q.add_argument("--size", type=int, default=2000)
    q.add_argument("--trigger-rate", type=float, default=0.5)
    q.add_argument("--double-rate", type=float, default=0.2)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", help="output JSONL path")
    q.set_defaults(func=cmd_synth)

    q = sub.add_parser("train", help="train a detector and an infilling model, optionally cross-validate")
    run_options(q)
    q.add_argument("--cv-folds", type=int, help="config key cv_folds")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("detect", help="classify a corpus")
    q.add_argument("--detector", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--format", default="jsonl")
    q.add_argument("--out", help="output JSONL path (default stdout)")
    q.set_defaults(func=cmd_detect)

    q = sub.add_parser("attribute", help="integrated-gradients dumps for hate-labeled inputs")
    q.add_argument("--detector", required=True)
    src = q.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--classification", help="classification dump from detect")
    q.add_argument("--format", default="jsonl")
    q.add_argument("--steps", type=int, default=50)
    q.add_argument("--quadrature", default="midpoint", choices=attribution.QUADRATURES)
    q.add_argument("--k", type=int, default=5)
    q.add_argument("--reduction", default="sum", choices=attribution.REDUCTIONS)
    q.add_argument("--baseline", default="pad", choices=attribution.BASELINES)
    q.add_argument("--out")
    q.set_defaults(func=cmd_attribute)

    q = sub.add_parser("reduce", help="rewrite pre-attributed comments")
    q.add_argument("--detector", required=True)
    q.add_argument("--mlm", required=True, help="encoder directory used for infilling")
    q.add_argument("--attributions", required=True)
    q.add_argument("--mask-fraction", type=float, default=0.5)
    q.add_argument("--candidates", type=int, default=10)
    q.add_argument("--scorer", default="detector", choices=pipeline.SCORERS)
    q.add_argument("--out")
    q.set_defaults(func=cmd_reduce)

    q = sub.add_parser("pipeline", help="full run: train, classify, attribute, reduce, score")
    run_options(q)
    q.set_defaults(func=cmd_pipeline)

    q = sub.add_parser("evaluate", help="metrics, Jaccard and agreement from dumps and rating files")
    q.add_argument("--run", help="run directory written by pipeline")
    q.add_argument("--classification")
    q.add_argument("--attributions")
    q.add_argument("--planted", help="synthetic corpus file with planted words")
    q.add_argument("--words", help="word-selection rating file")
    q.add_argument("--ratings", help="Likert rating file")
    q.add_argument("--out", help="JSON report path")
    q.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    level = (args.log_level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, pipeline.ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, EvaluationError, EncoderError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, pipeline.RunError, reducer.ReductionError, attribution.AttributionError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
