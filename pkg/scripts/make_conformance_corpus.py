#!/usr/bin/env python3
"""Regenerate the golden request/response conformance corpus.

The corpus pins the simulated-adapter semantics at the wire level: every
line holds one canonical request and the canonical response the built-in
models produce. Both the in-process adapters and the external reference
adapter must replay it byte-for-byte.

Usage: python3 scripts/make_conformance_corpus.py [out_path]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from coedg.adapters.simulated import SimulatedModel
from coedg.adapters.wire import PROTOCOL_VERSION, canonical_dumps, dispatch
from coedg.dataset import SynthConfig, synth_dataset

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("tests/data/conformance_corpus.jsonl")


def ground_truth_wire(dataset) -> dict:
    out = {}
    samples = {s.sample_id: s for s in dataset.samples}
    for sid, anns in dataset.ground_truth.items():
        s = samples[sid]
        out[sid] = {
            "width": s.width,
            "height": s.height,
            "boxes": [
                {"category": c, "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1}
                for c, b in anns
            ],
        }
    return out


def main() -> None:
    dataset = synth_dataset(
        SynthConfig(n_samples=12, n_categories=4, labeled_fraction=0.25), seed=42
    )
    gt = ground_truth_wire(dataset)
    categories = list(dataset.categories.names)
    sids = [s.sample_id for s in dataset.samples]

    def init_payload(role: str, seed: int) -> dict:
        return {
            "protocol": PROTOCOL_VERSION,
            "role": role,
            "seed": seed,
            "categories": categories,
            "embed_dim": 8,
            "train_pool_size": len(sids),
            "params": {},
            "ground_truth": gt,
        }

    def dip(sid: str, slots: list) -> dict:
        return {"sample_id": sid, "slots": slots, "class_token": True}

    abn_slot = {
        "kind": "abnormality",
        "crop": [10.0, 10.0, 80.0, 90.0],
        "location": [1, 1, 15, 17],
        "category": 2,
    }

    lines = []
    rid = 0

    def run(adapter: SimulatedModel, op: str, payload: dict) -> None:
        nonlocal rid
        request = {"id": rid, "op": op, "payload": payload}
        response = dispatch(adapter, request)
        lines.append(
            json.dumps(
                {"request": canonical_dumps(request), "response": canonical_dumps(response)},
                sort_keys=True,
            )
        )
        rid += 1

    for seed in (0, 7):
        detector = SimulatedModel()
        run(detector, "init", init_payload("detector", seed))
        for sid in sids[:6]:
            run(detector, "detect", {"sample_id": sid})
        run(detector, "generate", {"dip": dip(sids[0], [abn_slot]), "reference": None})
        run(
            detector,
            "train_epoch",
            {
                "labels": [
                    {
                        "sample_id": sids[0],
                        "detections": [
                            {
                                "category": 2,
                                "box": [10.0, 10.0, 80.0, 90.0],
                                "score": 0.95,
                                "source": "teacher",
                            }
                        ],
                    }
                ]
            },
        )
        for sid in sids[:3]:
            run(detector, "detect", {"sample_id": sid})
        run(detector, "reinit", {"seed": seed + 100})
        run(detector, "detect", {"sample_id": sids[0]})
        run(detector, "bogus_op", {})
        run(detector, "shutdown", {})

        generator = SimulatedModel()
        run(generator, "init", init_payload("generator", seed))
        for sid in sids[:4]:
            run(generator, "generate", {"dip": dip(sid, [abn_slot]), "reference": None})
        run(
            generator,
            "generate",
            {
                "dip": dip(sids[1], []),
                "reference": ["no", "acute", "findings", "."],
            },
        )
        for sid in sids[:3]:
            run(generator, "embed", {"sample_id": sid})
        run(
            generator,
            "train_epoch",
            {
                "samples": [
                    {
                        "sample_id": sids[0],
                        "dip": dip(sids[0], [abn_slot]),
                        "target": [0, 1, 0, 0],
                        "reference": ["there", "is", "evidence", "of", "edema", "."],
                    }
                ]
            },
        )
        run(generator, "detect", {"sample_id": sids[0]})  # wrong role
        run(generator, "reinit", {"seed": seed + 200})
        run(generator, "generate", {"dip": dip(sids[2], [abn_slot]), "reference": None})
        run(generator, "shutdown", {})

    # Version mismatch handshake.
    bad = SimulatedModel()
    run(bad, "init", {**init_payload("detector", 1), "protocol": "coedg/0"})

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} corpus entries to {OUT}")


if __name__ == "__main__":
    main()
