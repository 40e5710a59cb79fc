import csv
import json
import os
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hatescope.corpus import (
    RELEASE_COUNTS,
    RELEASE_FORMATS,
    RELEASE_TOTALS,
    Corpus,
    CorpusError,
    LabelError,
    LabeledComment,
    SchemaError,
    class_distribution,
    load_corpus,
    make_folds,
    normalize_label,
    preprocess,
    save_corpus,
)


@pytest.mark.parametrize(
    "raw, clean",
    [
        ("see @user http://x.co now!", "see now"),
        ("ok.", "ok."),
        ("a\nb,  c", "a b, c"),
        ("visit www.example.org today", "visit today"),
        ("HTTPS://X.CO loud", "loud"),
        ("क्या हाल है।", "क्या हाल है।"),
        ("what?! (really)", "what? really"),
        ("  \n ", ""),
    ],
)
def test_preprocess_examples(raw, clean):
    assert preprocess(raw) == clean


def test_preprocess_exposed_link_is_removed():
    # the bracket hides the prefix until punctuation goes
    assert preprocess("go (www.x.com") == "go"
    # a quoted mention is not a token starting with @, and @ itself is punctuation
    assert preprocess("hi \"@bob") == "hi bob"


@settings(max_examples=400)
@given(st.text())
def test_preprocess_idempotent(text):
    once = preprocess(text)
    assert preprocess(once) == once


@given(st.text(alphabet=st.sampled_from("ab .,?!@\n\t-wh:/")))
def test_preprocess_output_shape(text):
    out = preprocess(text)
    assert "\n" not in out and "  " not in out
    assert out == out.strip()
    assert not any(w.startswith("@") for w in out.split(" "))


@pytest.mark.parametrize(
    "fmt, token, label",
    [("hasoc", "HOF", 1), ("hasoc", "NOT", 0), ("hasoc", "hof", 1),
     ("macd", "0", 1), ("macd", "1", 0), ("bdshs", "1", 1), ("bdshs", "hate", 1), ("bdshs", "0", 0)],
)
def test_label_normalization(fmt, token, label):
    assert normalize_label(fmt, token) == label


def _write_rows(path: Path, header, rows, delimiter="\t"):
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(header)
        w.writerows(rows)


def test_load_hasoc_tsv(tmp_path):
    p = tmp_path / "hasoc.tsv"
    _write_rows(p, ["text_id", "text", "task_1", "task_2"],
                [["h1", "bad @x words!", "HOF", "PRFN"], ["h2", "fine\ntext", "NOT", "NONE"]])
    c = load_corpus(p, "hasoc", "train")
    assert [x.id for x in c] == ["h1", "h2"]
    assert [x.text for x in c] == ["bad words", "fine text"]
    assert c.labels == [1, 0]
    assert c.split == "train"


def test_load_macd_inverts_labels_and_numbers_rows(tmp_path):
    p = tmp_path / "macd.csv"
    _write_rows(p, ["language", "commentText", "label"],
                [["hindi", "abusive one", "0"], ["hindi", "kind one", "1"]], delimiter=",")
    c = load_corpus(p, "macd")
    assert c.labels == [1, 0]
    assert c.ids == ["0", "1"]


def test_missing_column_names_the_column(tmp_path):
    p = tmp_path / "bad.csv"
    _write_rows(p, ["sentence", "category"], [["x", "0"]], delimiter=",")
    with pytest.raises(SchemaError) as err:
        load_corpus(p, "bdshs")
    assert err.value.column == "label"


def test_unmappable_label_names_the_row(tmp_path):
    p = tmp_path / "bad.tsv"
    _write_rows(p, ["id", "text", "label"], [["r1", "ok", "HOF"], ["r2", "ok", "MAYBE"]])
    with pytest.raises(LabelError) as err:
        load_corpus(p, "hasoc")
    assert err.value.row_id == "r2" and err.value.token == "MAYBE"


def test_empty_file_with_header(tmp_path):
    p = tmp_path / "empty.tsv"
    _write_rows(p, ["id", "text", "label"], [])
    c = load_corpus(p, "hasoc")
    assert len(c) == 0
    assert class_distribution(c) == (0, 0)


def test_jsonl_round_trip(tmp_path):
    c = Corpus("x", [LabeledComment("a", "one two", 1), LabeledComment("b", "three", 0)])
    save_corpus(c, tmp_path / "c.jsonl")
    back = load_corpus(tmp_path / "c.jsonl", "jsonl")
    assert back.comments == c.comments
    rec = json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"id", "text", "label"}


def test_duplicate_ids_rejected():
    with pytest.raises(CorpusError):
        Corpus("x", [LabeledComment("a", "t", 1), LabeledComment("a", "u", 0)])


def test_words_rejoin_to_text():
    c = LabeledComment("a", preprocess("some  words, here!"), 0)
    assert " ".join(c.words) == c.text
    assert LabeledComment("b", "", 0).words == []


def test_class_distribution_single():
    assert class_distribution(Corpus("x", [LabeledComment("a", "t", 1)])) == (1, 0)


# Class counts of the public releases. Fixture files carry the exact published class counts in each
# source format; the real releases are checked too when HATESCOPE_DATA_DIR has them.

NATIVE = {
    "hasoc": (["text_id", "text", "task_1"], lambda i, hate: [f"t{i}", f"comment {i}", "HOF" if hate else "NOT"], "\t", ".tsv"),
    "macd": (["commentText", "label"], lambda i, hate: [f"comment {i}", "0" if hate else "1"], ",", ".csv"),
    "bdshs": (["sentence", "hate"], lambda i, hate: [f"comment {i}", "1" if hate else "0"], ",", ".csv"),
}


def _fixture_file(tmp_path, dataset, split):
    fmt = RELEASE_FORMATS[dataset]
    header, row, delim, ext = NATIVE[fmt]
    hate, non_hate = RELEASE_COUNTS[(dataset, split)]
    p = tmp_path / f"{dataset}_{split}{ext}"
    _write_rows(p, header, [row(i, i < hate) for i in range(hate + non_hate)], delimiter=delim)
    return p, fmt


@pytest.mark.parametrize("dataset, split", sorted(RELEASE_COUNTS))
def test_release_counts_from_fixture(tmp_path, dataset, split):
    path, fmt = _fixture_file(tmp_path, dataset, split)
    assert class_distribution(load_corpus(path, fmt, split)) == RELEASE_COUNTS[(dataset, split)]


def test_release_totals_consistent():
    sums = Counter()
    for (dataset, _), (h, n) in RELEASE_COUNTS.items():
        sums[dataset] += h + n
    assert dict(sums) == RELEASE_TOTALS


def _real_file(dataset, split):
    root = os.environ.get("HATESCOPE_DATA_DIR")
    if not root:
        return None
    for ext in (".tsv", ".csv"):
        p = Path(root) / f"{dataset}_{split}{ext}"
        if p.exists():
            return p
    return None


@pytest.mark.parametrize("dataset, split", sorted(RELEASE_COUNTS))
def test_release_counts_from_release(dataset, split):
    path = _real_file(dataset, split)
    if path is None:
        pytest.skip(f"{dataset} {split} release not present (set HATESCOPE_DATA_DIR)")
    counts = class_distribution(load_corpus(path, RELEASE_FORMATS[dataset], split))
    assert counts == RELEASE_COUNTS[(dataset, split)]


# folds


def _corpus(labels):
    return Corpus("f", [LabeledComment(f"c{i:03d}", f"w{i}", y) for i, y in enumerate(labels)])


def test_ten_comments_five_folds():
    folds = make_folds(_corpus([0, 1] * 5), 5)
    assert [len(f.val_ids) for f in folds] == [2] * 5


def test_stratified_six_four():
    c = _corpus([1] * 6 + [0] * 4)
    labels = dict(zip(c.ids, c.labels))
    for f in make_folds(c, 2, seed=11):
        hate = sum(labels[i] for i in f.val_ids)
        assert (hate, len(f.val_ids) - hate) == (3, 2)


def test_folds_deterministic():
    c = _corpus([0, 1, 1] * 7)
    assert make_folds(c, 4, 9) == make_folds(c, 4, 9)


def test_too_many_folds():
    with pytest.raises(CorpusError):
        make_folds(_corpus([0, 1, 0]), 4)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=60), st.integers(2, 10), st.integers(0, 10**6))
def test_fold_properties(labels, k, seed):
    if k > len(labels):
        return
    c = _corpus(labels)
    folds = make_folds(c, k, seed)
    ids = set(c.ids)
    seen = set()
    sizes = []
    for f in folds:
        assert not f.train_ids & f.val_ids
        assert f.train_ids | f.val_ids == ids
        assert not seen & f.val_ids
        seen |= f.val_ids
        sizes.append(len(f.val_ids))
    assert seen == ids
    assert max(sizes) - min(sizes) <= 1
    by_id = dict(zip(c.ids, c.labels))
    total_hate = sum(labels)
    for f in folds:
        hate = sum(by_id[i] for i in f.val_ids)
        expected = total_hate * len(f.val_ids) / len(labels)
        assert abs(hate - expected) <= 1
