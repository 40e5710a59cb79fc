"""
A resumable run directory
=========================

``run_pipeline`` trains, classifies, attributes, rewrites and scores, writing
one JSONL dump per stage. Running it again on the same directory reuses every
finished stage.
"""

import json
import tempfile
from pathlib import Path

import torch

from hatescope import synth
from hatescope.pipeline import build_config, run_pipeline

torch.set_num_threads(1)

work = Path(tempfile.mkdtemp(prefix="hatescope-"))
synth.generate(1500, 0.5, seed=2).save(work / "synth.jsonl")

config = build_config({
    "data.path": str(work / "synth.jsonl"),
    "data.format": "synth",
    "data.limit": "40",  # rewrite only the first 40 test comments
    "output_dir": str(work / "run"),
    "train.learning_rate": "1e-3",
    "train.max_epochs": "8",
    "train.token_dropout": "0.7",
    "train.blank_rate": "0.5",
    "reduce.scorer": "mlm",
})
print(config.dumps())

record = run_pipeline(config)
print("timings:", record.timings)
print(json.dumps(record.summary, indent=2))

###############################################################################
# Each rewrite record keeps every candidate, so the choice can be audited.
first = json.loads((work / "run" / "rewrites.jsonl").read_text().splitlines()[0])
print(first["source"], "->", first["chosen"], f"({first['selection_reason']})")

# the second call finds every stage complete and skips straight through
again = run_pipeline(config)
print("skipped:", again.skipped)
print("artifacts in", work)
