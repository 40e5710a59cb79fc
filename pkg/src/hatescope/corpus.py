"""Dataset ingestion, text cleaning and fold construction."""

from __future__ import annotations

import csv
import json
import random
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

KEEP_PUNCTUATION = frozenset(".,?।")  # full stop, comma, question mark, Devanagari danda
LINK_PREFIXES = ("www", "http://", "https://")

FORMATS = ("hasoc", "macd", "bdshs", "jsonl")
SPLITS = ("train", "val", "test", "all")

# Dataset-native column names accepted for each canonical column, in lookup order.
COLUMN_ALIASES: dict[str, dict[str, tuple[str, ...]]] = {
    "hasoc": {
        "id": ("id", "text_id", "_id"),
        "text": ("text",),
        "label": ("label", "task_1"),
    },
    "macd": {
        "id": ("id", "comment_id", "commentId"),
        "text": ("text", "commentText", "comment_text"),
        "label": ("label",),
    },
    "bdshs": {
        "id": ("id",),
        "text": ("text", "sentence"),
        "label": ("label", "hate"),
    },
    "jsonl": {"id": ("id",), "text": ("text",), "label": ("label",)},
}

# MACD and BD-SHS releases carry no comment id; the row number stands in for it.
ROW_NUMBER_IDS = frozenset({"macd", "bdshs"})

# Source label token -> internal label (1 = hate).
LABEL_MAPS: dict[str, dict[str, int]] = {
    "hasoc": {"HOF": 1, "NOT": 0},
    # MACD marks abusive comments with 0.
    "macd": {"0": 1, "1": 0},
    "bdshs": {"1": 1, "0": 0, "hate": 1, "non-hate": 0, "nonhate": 0},
    "jsonl": {"1": 1, "0": 0},
}

# Class-wise (hate, non_hate) counts of the public releases, per split.
RELEASE_COUNTS = {
    ("hasoc2019_hindi", "train"): (2469, 2196),
    ("hasoc2019_hindi", "test"): (605, 713),
    ("hasoc2021_hindi", "train"): (669, 1205),
    ("hasoc2021_hindi", "test"): (207, 418),
    ("macd_hindi", "train"): (10527, 9656),
    ("macd_hindi", "val"): (3464, 3264),
    ("macd_hindi", "test"): (3496, 3232),
    ("macd_tamil", "train"): (8302, 9698),
    ("macd_tamil", "val"): (2824, 3176),
    ("macd_tamil", "test"): (2795, 3205),
    ("macd_telugu", "train"): (9310, 8690),
    ("macd_telugu", "val"): (3099, 2901),
    ("macd_telugu", "test"): (3194, 2806),
    ("bdshs_bengali", "train"): (19324, 20900),
    ("bdshs_bengali", "val"): (2416, 2612),
    ("bdshs_bengali", "test"): (2416, 2613),
}
RELEASE_TOTALS = {
    "hasoc2019_hindi": 5983,
    "hasoc2021_hindi": 2499,
    "macd_hindi": 33639,
    "macd_tamil": 30000,
    "macd_telugu": 30000,
    "bdshs_bengali": 50281,
}
RELEASE_FORMATS = {
    "hasoc2019_hindi": "hasoc",
    "hasoc2021_hindi": "hasoc",
    "macd_hindi": "macd",
    "macd_tamil": "macd",
    "macd_telugu": "macd",
    "bdshs_bengali": "bdshs",
}


class CorpusError(ValueError):
    pass


class SchemaError(CorpusError):
    """The input file lacks a required column."""

    def __init__(self, column: str, path: str | Path):
        super().__init__(f"{path}: missing required column {column!r}")
        self.column = column


class LabelError(CorpusError):
    """A row carries a label token the format cannot map."""

    def __init__(self, row_id: str, token: str, path: str | Path):
        super().__init__(f"{path}: row {row_id!r} has unmappable label {token!r}")
        self.row_id = row_id
        self.token = token


@dataclass(frozen=True)
class RawComment:
    id: str
    text: str
    label_raw: str


@dataclass(frozen=True)
class LabeledComment:
    id: str
    text: str
    label: int

    @property
    def words(self) -> list[str]:
        return self.text.split(" ") if self.text else []


@dataclass
class Corpus:
    name: str
    comments: list[LabeledComment] = field(default_factory=list)
    split: str = "all"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}")
        seen = set()
        for c in self.comments:
            if c.id in seen:
                raise CorpusError(f"duplicate comment id {c.id!r} in corpus {self.name!r}")
            seen.add(c.id)

    def __len__(self) -> int:
        return len(self.comments)

    def __iter__(self) -> Iterator[LabeledComment]:
        return iter(self.comments)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.comments]

    @property
    def texts(self) -> list[str]:
        return [c.text for c in self.comments]

    @property
    def labels(self) -> list[int]:
        return [c.label for c in self.comments]

    def subset(self, ids: Iterable[str], split: str | None = None) -> "Corpus":
        wanted = set(ids)
        return Corpus(
            self.name,
            [c for c in self.comments if c.id in wanted],
            split or self.split,
        )


class ClassCounts(NamedTuple):
    hate: int
    non_hate: int


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: frozenset[str]
    val_ids: frozenset[str]


def _strip_once(text: str) -> str:
    tokens = []
    for tok in text.split():
        low = tok.lower()
        if low.startswith(LINK_PREFIXES) or tok.startswith("@"):
            continue
        tokens.append(tok)
    kept = "".join(
        ch
        for ch in " ".join(tokens)
        if ch in KEEP_PUNCTUATION or not unicodedata.category(ch).startswith("P")
    )
    return " ".join(kept.split())


def preprocess(text: str) -> str:
    """Drop links, @-mentions, newlines and most punctuation; collapse whitespace.

    Punctuation removal can expose a new link or mention (``"(www.x"``), so the
    rules are applied until the text stops changing. Every pass after the first
    only deletes characters, so the loop terminates and the result is idempotent.
    """
    prev, cur = None, text
    while cur != prev:
        prev, cur = cur, _strip_once(cur)
    return cur


def _sniff_delimiter(path: Path, header: str) -> str:
    if path.suffix.lower() == ".tsv":
        return "\t"
    if path.suffix.lower() == ".csv":
        return ","
    return "\t" if header.count("\t") > header.count(",") else ","


def _resolve_columns(fmt: str, header: Sequence[str], path: Path) -> dict[str, str | None]:
    resolved: dict[str, str | None] = {}
    for canonical, aliases in COLUMN_ALIASES[fmt].items():
        match = next((a for a in aliases if a in header), None)
        if match is None and not (canonical == "id" and fmt in ROW_NUMBER_IDS):
            raise SchemaError(canonical, path)
        resolved[canonical] = match
    return resolved


def normalize_label(fmt: str, token: str) -> int | None:
    token = token.strip()
    table = LABEL_MAPS[fmt]
    if token in table:
        return table[token]
    return table.get(token.upper(), table.get(token.lower()))


def read_raw(path: str | Path, format: str) -> list[RawComment]:
    """Read source rows without cleaning or label mapping."""
    path = Path(path)
    if format not in FORMATS:
        raise CorpusError(f"unknown corpus format {format!r}; expected one of {FORMATS}")
    if format == "jsonl":
        rows = []
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                for col in ("id", "text", "label"):
                    if col not in rec:
                        raise SchemaError(col, path)
                rows.append(RawComment(str(rec["id"]), rec["text"], str(rec["label"])))
        return rows

    with path.open(encoding="utf-8", newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=_sniff_delimiter(path, first))
        cols = _resolve_columns(format, reader.fieldnames or [], path)
        rows = []
        for rownum, row in enumerate(reader):
            rid = row[cols["id"]] if cols["id"] else str(rownum)
            rows.append(RawComment(str(rid), row[cols["text"]] or "", row[cols["label"]] or ""))
    return rows


def load_corpus(path: str | Path, format: str, split: str = "all", name: str | None = None) -> Corpus:
    """Load one dataset file into a cleaned corpus with labels mapped to 1 = hate."""
    comments = []
    for raw in read_raw(path, format):
        label = normalize_label(format, raw.label_raw)
        if label is None:
            raise LabelError(raw.id, raw.label_raw, path)
        comments.append(LabeledComment(raw.id, preprocess(raw.text), label))
    return Corpus(name or Path(path).stem, comments, split)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for c in corpus:
            fh.write(json.dumps({"id": c.id, "text": c.text, "label": c.label}, ensure_ascii=False) + "\n")


def class_distribution(corpus: Corpus) -> ClassCounts:
    hate = sum(c.label for c in corpus)
    return ClassCounts(hate, len(corpus) - hate)


def make_folds(corpus: Corpus, k: int, seed: int = 0) -> list[FoldSplit]:
    """Stratified k-fold split.

    Each class is shuffled with ``seed`` and the classes are dealt round-robin
    with one shared counter, so fold sizes differ by at most one and each
    fold's class counts differ from any other fold's by at most one.
    """
    if k < 2:
        raise CorpusError("k must be at least 2")
    if k > len(corpus):
        raise CorpusError(f"cannot make {k} folds from {len(corpus)} comments")
    rng = random.Random(seed)
    order: list[str] = []
    for label in (1, 0):
        ids = sorted(c.id for c in corpus if c.label == label)
        rng.shuffle(ids)
        order.extend(ids)
    buckets: list[list[str]] = [[] for _ in range(k)]
    for j, cid in enumerate(order):
        buckets[j % k].append(cid)
    every = frozenset(corpus.ids)
    return [FoldSplit(i, every - frozenset(b), frozenset(b)) for i, b in enumerate(buckets)]
