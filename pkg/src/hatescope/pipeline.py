"""End-to-end run: train, classify, attribute, reduce, score. Every stage writes
JSONL dumps into one run directory whose manifest checksums each output file."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import attribution, reducer
from .corpus import FORMATS, Corpus, load_corpus, make_folds
from .detector import TrainedDetector, TrainingConfig, cross_validate, train
from .encoder import build_encoder, load_encoder, pretrain_mlm, save_encoder
from .evaluation import classification_metrics, jaccard_summary
from .synth import SyntheticCorpus

log = logging.getLogger(__name__)

STAGES = ("train", "classify", "attribute", "reduce", "metrics")
DUMPS = {
    "classify": "classification.jsonl",
    "attribute": "attributions.jsonl",
    "reduce": "rewrites.jsonl",
    "metrics": "metrics.json",
}
SCORERS = ("detector", "mlm")
ENCODER_KINDS = ("builtin", "external")


class ConfigError(ValueError):
    """Unknown key, malformed line or invalid value in a run configuration."""


class RunError(RuntimeError):
    pass


@dataclass(frozen=True)
class DataSpec:
    path: str = ""
    format: str = "jsonl"  # corpus formats plus "synth" (JSONL with planted words)
    test_path: str = ""  # empty: hold out test_fraction of path
    test_fraction: float = 0.2
    limit: int = 0  # cap on test comments, 0 for all


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "builtin"
    checkpoint: str = ""  # pretrained masked-LM directory, external kind only
    vocab_size: int = 2000
    min_word_count: int = 2
    embedding_dim: int = 64
    layer_count: int = 2
    head_count: int = 2
    max_length: int = 64
    dropout: float = 0.1
    mlm_epochs: int = 15
    mlm_learning_rate: float = 2e-3


@dataclass(frozen=True)
class ReduceSpec:
    mask_fraction: float = 0.5
    candidates: int = 10
    scorer: str = "detector"


@dataclass(frozen=True)
class RunConfig:
    data: DataSpec = DataSpec()
    encoder: EncoderSpec = EncoderSpec()
    train: TrainingConfig = TrainingConfig()
    ig: attribution.IGConfig = attribution.IGConfig()
    reduce: ReduceSpec = ReduceSpec()
    cv_folds: int = 0  # 0 skips cross-validation
    early_stop_fraction: float = 0.1
    output_dir: str = "runs/default"
    seed: int = 0

    def validate(self, check_paths: bool = True) -> "RunConfig":
        if self.data.format not in FORMATS + ("synth",):
            raise ConfigError(f"data.format must be one of {FORMATS + ('synth',)}")
        if self.encoder.kind not in ENCODER_KINDS:
            raise ConfigError(f"encoder.kind must be one of {ENCODER_KINDS}")
        if self.encoder.kind == "external" and not self.encoder.checkpoint:
            raise ConfigError("encoder.kind = external needs encoder.checkpoint")
        if self.reduce.scorer not in SCORERS:
            raise ConfigError(f"reduce.scorer must be one of {SCORERS}")
        if not 0 < self.data.test_fraction < 1:
            raise ConfigError("data.test_fraction must be in (0, 1)")
        if self.cv_folds == 1 or self.cv_folds < 0:
            raise ConfigError("cv_folds must be 0 or at least 2")
        if check_paths:
            if not self.data.path:
                raise ConfigError("missing config key data.path")
            for key, p in (("data.path", self.data.path), ("data.test_path", self.data.test_path)):
                if p and not Path(p).exists():
                    raise FileNotFoundError(f"{key}: no such file {p}")
        return self

    def training(self) -> TrainingConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def reducer_config(self) -> reducer.ReducerConfig:
        return reducer.ReducerConfig(self.reduce.mask_fraction, self.reduce.candidates)

    def flat(self) -> dict[str, object]:
        return dict(_flatten(self))

    def dumps(self, include_output_dir: bool = False) -> str:
        """Canonical text form; the output directory is location, not configuration."""
        items = self.flat()
        if not include_output_dir:
            items.pop("output_dir")
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in items.items())


def _flatten(obj, prefix: str = ""):
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            yield from _flatten(value, f"{prefix}{f.name}.")
        else:
            yield f"{prefix}{f.name}", value


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(key: str, raw: str, like):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``[section]`` prefixes the keys that follow it."""
    out, section = {}, ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            section = f"{section}." if section else ""
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[section + key] = value
    return out


def build_config(values: dict[str, str], base: RunConfig = RunConfig()) -> RunConfig:
    """Apply string overrides to ``base``; unknown keys are an error."""
    known = base.flat()
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    nested: dict[str, dict] = {}
    top = {}
    for key, raw in values.items():
        value = _coerce(key, raw, known[key])
        if "." in key:
            section, name = key.split(".", 1)
            nested.setdefault(section, {})[name] = value
        else:
            top[key] = value
    try:
        for section, updates in nested.items():
            top[section] = dataclasses.replace(getattr(base, section), **updates)
        return dataclasses.replace(base, **top)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update(overrides or {})
    return build_config(values)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_jsonl(path: Path, records: Iterable[dict]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    tmp.replace(path)


def read_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def load_data(path: str | Path, format: str) -> tuple[Corpus, dict[str, tuple[str, ...]] | None]:
    """Corpus plus planted hate words when the file carries them."""
    if format == "synth":
        s = SyntheticCorpus.load(path, Path(path).stem)
        return s.corpus, s.planted
    return load_corpus(path, format), None


def split_data(config: RunConfig) -> tuple[Corpus, Corpus, dict | None]:
    corpus, planted = load_data(config.data.path, config.data.format)
    if config.data.test_path:
        test, test_planted = load_data(config.data.test_path, config.data.format)
        return corpus, test, test_planted
    k = max(2, round(1 / config.data.test_fraction))
    fold = make_folds(corpus, k, config.seed)[0]
    return corpus.subset(fold.train_ids, "train"), corpus.subset(fold.val_ids, "test"), planted


# per-comment records


def classification_records(detector: TrainedDetector, corpus: Corpus, batch_size: int = 256) -> list[dict]:
    records = []
    for start in range(0, len(corpus), batch_size):
        chunk = corpus.comments[start : start + batch_size]
        probs = detector.probabilities([c.text for c in chunk])
        labels = detector.predict([c.text for c in chunk])
        for c, p, label in zip(chunk, probs, labels):
            records.append({
                "id": c.id, "text": c.text, "gold": c.label, "label": label,
                "probs": [float(p[0]), float(p[1])], "degenerate": not c.text.strip(),
            })
    return records


def attribution_record(detector: TrainedDetector, comment_id: str, text: str, ig: attribution.IGConfig) -> dict:
    rec = attribution.explain(detector, text, ig, target_class=1).to_record(comment_id)
    rec["text"] = text
    return rec


def hate_words_from_record(rec: dict) -> list[attribution.HateWord]:
    return [attribution.HateWord(h["word"], h["position"], h["score"]) for h in rec["top_words"]]


def rewrite_record(detector, mlm, rec: dict, config: reducer.ReducerConfig, scorer) -> dict:
    red = reducer.reduce_text(rec["text"], hate_words_from_record(rec), mlm, config, scorer=scorer, detector=detector)
    return red.to_record(rec["id"])


@dataclass
class StageResult:
    records: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)


def attribute_stage(detector, classified: Sequence[dict], ig: attribution.IGConfig) -> StageResult:
    out = StageResult()
    for rec in classified:
        if rec["label"] != 1:
            continue
        try:
            out.records.append(attribution_record(detector, rec["id"], rec["text"], ig))
        except Exception as exc:  # per-comment failures never stop the run
            out.failures.append({"id": rec["id"], "stage": "attribute", "error": f"{type(exc).__name__}: {exc}"})
    return out


def reduce_stage(detector, mlm, attributed: Sequence[dict], config: reducer.ReducerConfig, scorer) -> StageResult:
    out = StageResult()
    for rec in attributed:
        if not rec["top_words"]:
            continue
        try:
            out.records.append(rewrite_record(detector, mlm, rec, config, scorer))
        except Exception as exc:
            out.failures.append({"id": rec["id"], "stage": "reduce", "error": f"{type(exc).__name__}: {exc}"})
    return out


def summarize(classified: Sequence[dict], attributed: Sequence[dict], rewritten: Sequence[dict],
              planted: dict | None = None) -> dict:
    """Detection metrics, completeness, rewrite and residual-hate rates, and the
    planted-word Jaccard when ground truth is known."""
    out: dict = {"comments": len(classified)}
    golds = [r["gold"] for r in classified if r.get("gold") is not None]
    if classified and len(golds) == len(classified):
        out["detection"] = classification_metrics([r["label"] for r in classified], golds).as_dict()
    hate = sum(r["label"] for r in classified)
    out["hate_rate"] = hate / len(classified) if classified else 0.0
    residuals = [r["completeness_residual"] for r in attributed]
    out["completeness_residual_mean"] = float(np.mean(residuals)) if residuals else None
    out["completeness_residual_max"] = float(np.max(residuals)) if residuals else None
    out["rewrite_rate"] = len(rewritten) / hate if hate else 0.0
    still = [r["residual_hate"] for r in rewritten if r["residual_hate"] is not None]
    out["residual_hate_rate"] = sum(still) / len(still) if still else None
    if planted is not None:
        gold_hate = {r["id"] for r in classified if r.get("gold") == 1}
        pairs = [({h["word"] for h in r["top_words"]}, set(planted.get(r["id"], ())))
                 for r in attributed if r["id"] in gold_hate]
        if pairs:
            j = jaccard_summary(pairs)
            out["jaccard"] = {"per_item_mean": j.per_item_mean, "pooled": j.pooled, "items": j.items}
    return out


# run directory


@dataclass
class RunRecord:
    run_id: str
    directory: Path
    config: RunConfig
    manifest: dict[str, dict[str, str]]
    timings: dict[str, float]
    failures: list[dict]
    summary: dict
    skipped: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


class RunDirectory:
    """Owns the manifest; a stage listed there is complete and its files are frozen."""

    def __init__(self, root: Path, config: RunConfig):
        self.root = root
        self.config_text = config.dumps()
        self.manifest_path = root / "manifest.json"
        root.mkdir(parents=True, exist_ok=True)
        snapshot = root / "config.txt"
        if snapshot.exists() and snapshot.read_text(encoding="utf-8") != self.config_text:
            raise RunError(f"{root} holds a run with a different configuration")
        if not snapshot.exists():
            snapshot.write_text(self.config_text, encoding="utf-8")
        self.manifest = json.loads(self.manifest_path.read_text()) if self.manifest_path.exists() else {}
        self.manifest.setdefault("config.txt", {"config.txt": sha256_file(snapshot)})

    @property
    def run_id(self) -> str:
        return hashlib.sha256(self.config_text.encode()).hexdigest()[:12]

    def done(self, stage: str) -> bool:
        entry = self.manifest.get(stage)
        if entry is None:
            return False
        for rel, digest in entry.items():
            p = self.root / rel
            if not p.exists() or sha256_file(p) != digest:
                raise RunError(f"stage {stage}: {rel} is missing or modified since it completed")
        return True

    def complete(self, stage: str, paths: Iterable[Path]) -> None:
        files = []
        for p in paths:
            files += sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        self.manifest[stage] = {str(q.relative_to(self.root)): sha256_file(q) for q in files}
        write_json(self.manifest_path, self.manifest)


def train_models(config: RunConfig, train_corpus: Corpus):
    """Detector (with an inner early-stopping split) and an infilling MLM.

    The built-in kind pretrains a separate MLM on the training texts; the external
    kind fine-tunes a copy of the checkpoint and infills with the checkpoint itself.
    """
    enc = config.encoder
    tc = config.training()
    if enc.kind == "external":
        from .external import ExternalEncoder

        mlm = ExternalEncoder.from_pretrained(enc.checkpoint, enc.max_length)
        options = {"encoder": mlm}
    else:
        options = dict(vocab_size=enc.vocab_size, min_word_count=enc.min_word_count,
                       embedding_dim=enc.embedding_dim, layer_count=enc.layer_count, head_count=enc.head_count,
                       max_length=enc.max_length, dropout=enc.dropout, seed=config.seed)
        mlm = build_encoder(train_corpus.texts, **options)
        pretrain_mlm(mlm, train_corpus.texts, epochs=enc.mlm_epochs, learning_rate=enc.mlm_learning_rate,
                     seed=config.seed)
    inner_k = max(2, round(1 / config.early_stop_fraction))
    inner = make_folds(train_corpus, inner_k, config.seed)[0]
    detector = train(train_corpus.subset(inner.train_ids), train_corpus.subset(inner.val_ids, "val"), tc, **options)
    cv = None
    if config.cv_folds:
        cv = cross_validate(train_corpus, config.cv_folds, tc, early_stop_fraction=config.early_stop_fraction,
                            **options)
    return detector, mlm, cv


def cv_report(cv) -> dict:
    return {
        "folds": [r.as_dict() for r in cv.reports],
        "summary": cv.summary.as_dict(),
        "f1_macro": cv.summary.format("f1_macro"),
    }


def run_pipeline(config: RunConfig) -> RunRecord:
    config.validate()
    root = Path(config.output_dir)
    run = RunDirectory(root, config)
    timings, skipped = {}, []
    train_corpus, test_corpus, planted = split_data(config)
    if config.data.limit:
        test_corpus = Corpus(test_corpus.name, test_corpus.comments[: config.data.limit], test_corpus.split)

    def timed(stage, fn):
        t0 = time.perf_counter()
        result = fn()
        timings[stage] = round(time.perf_counter() - t0, 3)
        return result

    if run.done("train"):
        skipped.append("train")
        detector = TrainedDetector.load(root / "detector")
        mlm = load_encoder(root / "mlm")
    else:
        detector, mlm, cv = timed("train", lambda: train_models(config, train_corpus))
        detector.save(_fresh_dir(root / "detector"))
        save_encoder(mlm, _fresh_dir(root / "mlm"))
        outputs = [root / "detector", root / "mlm"]
        if cv is not None:
            write_json(root / "cv.json", cv_report(cv))
            outputs.append(root / "cv.json")
        run.complete("train", outputs)

    def stage(name, fn):
        path = root / DUMPS[name]
        if run.done(name):
            skipped.append(name)
            return read_jsonl(path), []
        result = timed(name, fn)
        write_jsonl(path, result.records)
        run.complete(name, [path])
        return result.records, result.failures

    classified, _ = stage("classify", lambda: StageResult(classification_records(detector, test_corpus)))
    attributed, f1 = stage("attribute", lambda: attribute_stage(detector, classified, config.ig))
    scorer = mlm if config.reduce.scorer == "mlm" else detector.encoder
    rewritten, f2 = stage("reduce", lambda: reduce_stage(detector, mlm, attributed, config.reducer_config(), scorer))
    failures = f1 + f2

    metrics_path = root / DUMPS["metrics"]
    if run.done("metrics"):
        skipped.append("metrics")
        summary = json.loads(metrics_path.read_text())
    else:
        summary = timed("metrics", lambda: summarize(classified, attributed, rewritten, planted))
        if (root / "cv.json").exists():
            summary["cross_validation"] = json.loads((root / "cv.json").read_text())["summary"]
        write_json(metrics_path, summary)
        run.complete("metrics", [metrics_path])
    # failures and timings vary between resumed runs, so they stay out of the manifest
    previous = json.loads((root / "run.json").read_text()) if (root / "run.json").exists() else {}
    failures = failures or previous.get("failures", [])
    write_json(root / "run.json", {
        "run_id": run.run_id,
        "timings": {**previous.get("timings", {}), **timings},
        "skipped": skipped,
        "failures": failures,
    })
    return RunRecord(run.run_id, root, config, run.manifest, timings, failures, summary, skipped)


def _fresh_dir(path: Path) -> Path:
    """A stage directory left by an interrupted run is discarded before rewriting."""
    if path.exists():
        for q in sorted(path.rglob("*"), reverse=True):
            q.unlink() if q.is_file() else q.rmdir()
    path.mkdir(parents=True, exist_ok=True)
    return path


__all__ = [
    "ConfigError", "DataSpec", "EncoderSpec", "ReduceSpec", "RunConfig", "RunError",
    "RunRecord", "build_config", "load_config", "parse_config_text", "run_pipeline", "summarize",
]
