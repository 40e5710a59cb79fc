"""Classification metrics, fold summaries, Jaccard scoring and human-rating agreement."""

from __future__ import annotations

import csv
import itertools
import math
import statistics
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

METRICS = (
    "accuracy",
    "precision_macro",
    "recall_macro",
    "f1_macro",
    "precision_micro",
    "recall_micro",
    "f1_micro",
)

LIKERT_SCALE = range(1, 6)


class EvaluationError(ValueError):
    pass


class RatingFileError(EvaluationError):
    def __init__(self, path, problems: list[tuple[str, str]]):
        detail = "; ".join(f"row {rid}: {msg}" for rid, msg in problems)
        super().__init__(f"{path}: {detail}")
        self.problems = problems


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    precision_micro: float
    recall_micro: float
    f1_micro: float
    per_class: tuple[ClassScores, ClassScores]  # index = label

    @property
    def support(self) -> tuple[int, int]:
        return (self.per_class[0].support, self.per_class[1].support)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = [asdict(c) for c in self.per_class]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        per_class = tuple(ClassScores(**c) for c in d["per_class"])
        return cls(**{m: d[m] for m in METRICS}, per_class=per_class)


def confusion(predictions: Sequence[int], golds: Sequence[int]) -> np.ndarray:
    """2x2 matrix indexed [gold, predicted]."""
    m = np.zeros((2, 2), dtype=np.int64)
    np.add.at(m, (np.asarray(golds, dtype=int), np.asarray(predictions, dtype=int)), 1)
    return m


def classification_metrics(predictions: Sequence[int], golds: Sequence[int]) -> MetricsReport:
    if len(predictions) != len(golds):
        raise EvaluationError(f"length mismatch: {len(predictions)} predictions, {len(golds)} golds")
    if not len(golds):
        raise EvaluationError("no labels to score")
    if not set(predictions) <= {0, 1} or not set(golds) <= {0, 1}:
        raise EvaluationError("labels must be 0 or 1")
    m = confusion(predictions, golds)
    per_class = []
    for c in (0, 1):
        tp = m[c, c]
        p = _safe_div(tp, m[:, c].sum())
        r = _safe_div(tp, m[c, :].sum())
        per_class.append(ClassScores(float(p), float(r), _safe_div(2 * p * r, p + r), int(m[c, :].sum())))
    # micro: pool tp/fp/fn over both classes
    tp = np.trace(m)
    fp = m.sum() - tp  # every error is one false positive for some class
    fn = fp
    micro_p = _safe_div(tp, tp + fp)
    micro_r = _safe_div(tp, tp + fn)
    return MetricsReport(
        accuracy=float(tp / m.sum()),
        precision_macro=float(np.mean([c.precision for c in per_class])),
        recall_macro=float(np.mean([c.recall for c in per_class])),
        f1_macro=float(np.mean([c.f1 for c in per_class])),
        precision_micro=float(micro_p),
        recall_micro=float(micro_r),
        f1_micro=float(_safe_div(2 * micro_p * micro_r, micro_p + micro_r)),
        per_class=tuple(per_class),
    )


@dataclass(frozen=True)
class FoldSummary:
    mean: dict[str, float]
    std: dict[str, float]
    folds: int

    def format(self, metric: str = "f1_macro") -> str:
        return format_dispersion(self.mean[metric], self.std[metric])

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "folds": self.folds}


def format_dispersion(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.3f}"


def aggregate_folds(reports: Sequence[MetricsReport]) -> FoldSummary:
    """Mean and sample (n - 1) standard deviation of every metric across folds."""
    if len(reports) < 2:
        raise EvaluationError("need at least two fold reports")
    mean, std = {}, {}
    for name in METRICS:
        values = [getattr(r, name) for r in reports]
        mean[name] = statistics.fmean(values)
        std[name] = statistics.stdev(values)
    return FoldSummary(mean, std, len(reports))


def format_table(rows: Mapping[str, FoldSummary]) -> str:
    """Plain-text table: one row per run, accuracy / precision / recall / F1 columns."""
    columns = [("Accuracy", "accuracy"), ("Precision", "precision_macro"),
               ("Recall", "recall_macro"), ("Macro F1", "f1_macro")]
    name_w = max([len("Run")] + [len(k) for k in rows])
    lines = ["  ".join([f"{'Run':<{name_w}}"] + [f"{h:<14}" for h, _ in columns]).rstrip()]
    for name, summary in rows.items():
        cells = [f"{summary.format(key):<14}" for _, key in columns]
        lines.append("  ".join([f"{name:<{name_w}}"] + cells).rstrip())
    return "\n".join(lines)


def jaccard(set_a: Iterable, set_b: Iterable) -> float:
    a, b = set(set_a), set(set_b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class JaccardSummary:
    per_item_mean: float
    pooled: float
    items: int


def jaccard_summary(pairs: Iterable[tuple[Iterable, Iterable]]) -> JaccardSummary:
    """Mean of per-item Jaccard indices, and the pooled |sum of intersections| /
    |sum of unions| over all items."""
    scores, inter, union = [], 0, 0
    for a, b in pairs:
        a, b = set(a), set(b)
        scores.append(jaccard(a, b))
        inter += len(a & b)
        union += len(a | b)
    if not scores:
        raise EvaluationError("no items to score")
    return JaccardSummary(statistics.fmean(scores), inter / union if union else 1.0, len(scores))


@dataclass(frozen=True)
class HumanEvalRecord:
    comment_id: str
    annotator_id: str
    rating: int | None = None
    words: frozenset[str] | None = None


def likert_ingest(path: str | Path) -> list[HumanEvalRecord]:
    """Read a rating file (``comment_id, annotator_id, rating``) or a word-selection
    file (``comment_id, annotator_id, words`` with ``|``-separated words).

    All invalid rows are collected and reported together.
    """
    path = Path(path)
    delimiter = "\t" if path.suffix.lower() == ".tsv" else ","
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter, skipinitialspace=True)
        header = [h.strip() for h in reader.fieldnames or []]
        reader.fieldnames = header
        for col in ("comment_id", "annotator_id"):
            if col not in header:
                raise RatingFileError(path, [("header", f"missing column {col!r}")])
        if "rating" in header:
            mode = "rating"
        elif "words" in header:
            mode = "words"
        else:
            raise RatingFileError(path, [("header", "missing column 'rating' or 'words'")])
        records, problems = [], []
        for rownum, row in enumerate(reader, start=1):
            cid = (row["comment_id"] or "").strip()
            aid = (row["annotator_id"] or "").strip()
            rid = f"{rownum} ({cid})"
            if not cid or not aid:
                problems.append((rid, "empty comment_id or annotator_id"))
                continue
            raw = (row[mode] or "").strip()
            if mode == "rating":
                try:
                    value = int(raw)
                except ValueError:
                    problems.append((rid, f"rating {raw!r} is not an integer"))
                    continue
                if value not in LIKERT_SCALE:
                    problems.append((rid, f"rating {value} outside 1-5"))
                    continue
                records.append(HumanEvalRecord(cid, aid, rating=value))
            else:
                words = frozenset(w.strip() for w in raw.split("|") if w.strip())
                records.append(HumanEvalRecord(cid, aid, words=words))
    if problems:
        raise RatingFileError(path, problems)
    return records


def check_word_records(records: Iterable[HumanEvalRecord], texts: Mapping[str, str]) -> list[str]:
    """Comment ids whose selected words are not all words of the comment."""
    bad = []
    for r in records:
        if r.words is None:
            continue
        text = texts.get(r.comment_id)
        if text is None or not r.words <= set(text.split(" ")):
            bad.append(r.comment_id)
    return bad


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise EvaluationError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise EvaluationError("need at least two paired values")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise EvaluationError("correlation undefined for a constant sequence")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


@dataclass(frozen=True)
class AgreementReport:
    annotator_means: dict[str, float]
    pairwise: dict[tuple[str, str], float]
    pooled: float


def agreement(records: Iterable[HumanEvalRecord]) -> AgreementReport:
    """Per-annotator mean rating and Pearson agreement over commonly rated comments.

    ``pooled`` correlates the stacked rating pairs of every annotator pair.
    """
    by_annotator: dict[str, dict[str, int]] = {}
    for r in records:
        if r.rating is not None:
            by_annotator.setdefault(r.annotator_id, {})[r.comment_id] = r.rating
    if len(by_annotator) < 2:
        raise EvaluationError("agreement needs at least two annotators")
    means = {a: statistics.fmean(v.values()) for a, v in sorted(by_annotator.items())}
    pairwise, xs, ys = {}, [], []
    for a, b in itertools.combinations(sorted(by_annotator), 2):
        common = sorted(set(by_annotator[a]) & set(by_annotator[b]))
        x = [by_annotator[a][c] for c in common]
        y = [by_annotator[b][c] for c in common]
        pairwise[(a, b)] = pearson(x, y)
        xs += x
        ys += y
    return AgreementReport(means, pairwise, pearson(xs, ys))
