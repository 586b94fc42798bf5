"""
Command line walkthrough
========================

Generate a dataset, train, evaluate and run the built-in checks, all
through the ``lacforest`` command. The calls go through ``main`` so the
script runs anywhere the package is installed.
"""

import json
import tempfile
from pathlib import Path

from lacforest.cli import main

work = Path(tempfile.mkdtemp())

# a four-cluster dataset; the cluster without a label is the new class
spec = {
    "d": 2,
    "seed": 3,
    "clusters": [
        {"mean": [0, 0], "std": 1, "count": 800, "label": 1},
        {"mean": [10, 0], "std": 1, "count": 800, "label": 2},
        {"mean": [0, 10], "std": 1, "count": 800, "label": 3},
        {"mean": [10, 10], "std": 1, "count": 800},
    ],
    "split": {"n_l": 500, "n_u": 1000, "n_test": 400},
}
(work / "spec.json").write_text(json.dumps(spec))
main(["synth", str(work / "spec.json"), "--out", str(work / "data")])

config = {
    "theta": 0.5,
    "mode": "forest",
    "m": 50,
    "seed": 0,
    "data": {"train": str(work / "data" / "train.csv"), "unlabeled": str(work / "data" / "unlabeled.csv")},
}
(work / "run.json").write_text(json.dumps(config))
main(["train", "--config", str(work / "run.json"), "--out", str(work / "run")])
main(["eval", str(work / "run" / "model.json"), str(work / "data" / "test.csv"), "--out", str(work / "eval")])

# quick self checks against the oracles
main(["check", "all", "--quick"])
print("artifacts in", work)
