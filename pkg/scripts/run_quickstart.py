#!/usr/bin/env python3
"""End-to-end quickstart: synthesize a dataset, run three co-evolution
iterations with the built-in simulated models, evaluate the final student
against the ground truth, and sweep the pseudo-label threshold.

Usage: python3 scripts/run_quickstart.py [workdir]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from coedg.cli import main

workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("quickstart")
workdir.mkdir(parents=True, exist_ok=True)
data = workdir / "data"
run = workdir / "run"

steps = [
    [
        "make-synth",
        "--out-dir", str(data),
        "--n-samples", "500",
        "--n-categories", "8",
        "--labeled-fraction", "0.1",
        "--seed", "0",
    ],
]

config = workdir / "config.json"
config.write_text(
    json.dumps(
        {
            "dataset_dir": str(data),
            "iterations": 3,
            "epochs_per_iteration": 20,
            "tau": 0.9,
            "seed": 0,
        },
        indent=2,
    )
)

steps.append(["coevolve", "--config", str(config), "--out-dir", str(run)])
steps.append(
    [
        "eval-det",
        "--pred", str(run / "predictions" / "iter2_detections.jsonl"),
        "--gt", str(data / "ground_truth.json"),
        "--categories", str(data / "categories.json"),
        "--out-dir", str(workdir / "eval"),
    ]
)
steps.append(
    [
        "sweep-tau",
        "--config", str(config),
        "--tau-grid", "0.7,0.8,0.9,0.95",
        "--out-dir", str(workdir / "sweep"),
    ]
)

for argv in steps:
    print(f"$ coedg {' '.join(argv)}")
    rc = main(argv)
    if rc != 0:
        sys.exit(rc)

print(f"\nDone. Summary: {run / 'summary.md'}")
