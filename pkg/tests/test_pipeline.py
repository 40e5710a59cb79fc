import json
import shutil

import pytest
import torch

from hatescope import synth
from hatescope.detector import TrainedDetector
from hatescope.pipeline import (
    DUMPS,
    ConfigError,
    RunDirectory,
    RunError,
    build_config,
    load_config,
    parse_config_text,
    reduce_stage,
    run_pipeline,
    summarize,
)
from hatescope.reducer import ReducerConfig

SMALL = """
# tiny run
seed = 0
[data]
format = synth
limit = 16
[encoder]
embedding_dim = 16
mlm_epochs = 2
[train]
learning_rate = 2e-3
max_epochs = 3
batch_size = 8
token_dropout = 0.5
blank_rate = 0.5
[ig]
steps = 16
[reduce]
candidates = 3
scorer = mlm
"""


def small_config(tmp_path, data, out="run", **extra):
    values = parse_config_text(SMALL)
    values.update({"data.path": str(data), "output_dir": str(tmp_path / out)})
    values.update(extra)
    return build_config(values)


@pytest.fixture(scope="module")
def synth_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synth.jsonl"
    synth.generate(200, 0.5, seed=0).save(path)
    return path


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory, synth_file):
    root = tmp_path_factory.mktemp("runs")
    return run_pipeline(small_config(root, synth_file))


def test_parse_sections_and_comments():
    values = parse_config_text("a = 1  # note\n[train]\nseed = 3\n\n[]\nb = x")
    assert values == {"a": "1", "train.seed": "3", "b": "x"}
    with pytest.raises(ConfigError):
        parse_config_text("just words")


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="train.learnin_rate"):
        build_config({"train.learnin_rate": "1"})


def test_bad_value_type():
    with pytest.raises(ConfigError, match="max_epochs"):
        build_config({"train.max_epochs": "many"})
    with pytest.raises(ConfigError):
        build_config({"train.learning_rate": "-1"})


def test_dumps_round_trips(tmp_path):
    cfg = build_config({"train.max_epochs": "7", "ig.quadrature": "left-riemann", "output_dir": "x"})
    p = tmp_path / "c.txt"
    p.write_text(cfg.dumps(include_output_dir=True))
    assert load_config(p) == cfg


def test_validate(tmp_path):
    with pytest.raises(ConfigError):
        build_config({"data.format": "xml", "data.path": "x"}).validate(check_paths=False)
    with pytest.raises(FileNotFoundError):
        build_config({"data.path": str(tmp_path / "missing")}).validate()
    with pytest.raises(ConfigError):
        build_config({"cv_folds": "1"}).validate(check_paths=False)


def test_run_writes_every_dump(finished_run):
    root = finished_run.directory
    for name in DUMPS.values():
        assert (root / name).exists()
    assert (root / "detector").is_dir() and (root / "mlm").is_dir()
    manifest = json.loads((root / "manifest.json").read_text())
    assert set(manifest) == {"config.txt", "train", "classify", "attribute", "reduce", "metrics"}
    assert finished_run.summary["comments"] == 16


def test_reducer_only_sees_hate_labels(finished_run):
    root = finished_run.directory
    classified = {r["id"]: r for r in map(json.loads, (root / DUMPS["classify"]).read_text().splitlines())}
    for line in (root / DUMPS["attribute"]).read_text().splitlines():
        assert classified[json.loads(line)["id"]]["label"] == 1
    for line in (root / DUMPS["reduce"]).read_text().splitlines():
        assert classified[json.loads(line)["id"]]["label"] == 1


def test_resume_skips_and_keeps_files(tmp_path, finished_run):
    root = finished_run.directory
    before = {p.name: p.stat().st_mtime_ns for p in root.iterdir() if p.is_file() and p.name != "run.json"}
    again = run_pipeline(finished_run.config)
    assert again.skipped == ["train", "classify", "attribute", "reduce", "metrics"]
    after = {p.name: p.stat().st_mtime_ns for p in root.iterdir() if p.is_file() and p.name != "run.json"}
    assert before == after
    assert again.summary == finished_run.summary


def test_same_seed_same_manifest(tmp_path, synth_file, finished_run):
    other = run_pipeline(small_config(tmp_path, synth_file, "again"))
    assert other.manifest == finished_run.manifest
    assert other.run_id == finished_run.run_id


def test_modified_dump_is_detected(tmp_path, synth_file):
    rec = run_pipeline(small_config(tmp_path, synth_file, "tamper", **{"data.limit": "4"}))
    (rec.directory / DUMPS["classify"]).write_text("{}\n")
    with pytest.raises(RunError, match="modified"):
        run_pipeline(rec.config)


def test_changed_config_refuses_directory(tmp_path, synth_file, finished_run):
    changed = build_config({"seed": "1"}, finished_run.config)
    with pytest.raises(RunError):
        run_pipeline(changed)


def test_all_non_hate_labels_give_empty_rewrites(tmp_path, finished_run):
    # a detector whose head always prefers class 0, so nothing reaches the reducer
    detector = TrainedDetector.load(finished_run.directory / "detector")
    with torch.no_grad():
        detector.head.weight.zero_()
        detector.head.bias.copy_(torch.tensor([1.0, -1.0]))
    root = tmp_path / "b"
    detector.save(root / "detector")
    shutil.copytree(finished_run.directory / "mlm", root / "mlm")
    cfg = build_config({"output_dir": str(root)}, finished_run.config)
    RunDirectory(root, cfg).complete("train", [root / "detector", root / "mlm"])
    rec = run_pipeline(cfg)
    assert rec.skipped == ["train"]
    assert (root / DUMPS["attribute"]).read_text() == ""
    assert (root / DUMPS["reduce"]).read_text() == ""
    assert rec.summary["hate_rate"] == 0.0 and rec.summary["rewrite_rate"] == 0.0


def test_summarize_perfect_dump():
    classified = [{"id": "a", "label": 1, "gold": 1}, {"id": "b", "label": 0, "gold": 0}]
    attributed = [{"id": "a", "top_words": [{"word": "vrakk"}], "completeness_residual": 0.0}]
    s = summarize(classified, attributed, [], {"a": ("vrakk",), "b": ()})
    assert s["detection"]["f1_macro"] == 1.0
    assert s["jaccard"]["per_item_mean"] == 1.0 == s["jaccard"]["pooled"]


def test_reduce_stage_captures_failures(small_detector, small_mlm):
    bad = [{"id": "x", "text": "look at this vrakk teacher",
            "top_words": [{"word": "wrong", "position": 3, "score": 1.0}]}]
    out = reduce_stage(small_detector, small_mlm, bad, ReducerConfig(), small_mlm)
    assert out.records == [] and out.failures[0]["id"] == "x"
