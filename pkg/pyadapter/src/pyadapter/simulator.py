"""Self-contained simulated detector/generator behind the coedg/1 protocol.

This module intentionally duplicates the engine's built-in simulated models
instead of importing them: the whole point of this package is to prove that
an adapter living in a separate process, coupled to the engine only through
the wire protocol, can stand in for them. The golden conformance corpus
shipped with the engine pins both implementations byte-for-byte; if either
side changes, the corpus replay fails.

All behavior is documented in the engine's docs/protocol.md ("Simulated
model semantics"); every random draw comes from a per-(seed, purpose,
sample) stream, so responses are pure functions of adapter state and
request.

A real neural model slots in here: implement an object with the same
``handle(op, payload) -> payload`` surface (raising UnsupportedOperation /
AdapterFault as appropriate) and hand it to ``pyadapter.server.serve``.
"""

from __future__ import annotations

import hashlib
import random

PROTOCOL_VERSION = "coedg/1"

DETECTOR_DEFAULTS = {
    "sigma": 10.0,
    "drop": 0.5,
    "fp_rate": 1.0,
    "learn_rate": 0.12,
    "initial_skill": 0.1,
    "coverage_floor": 0.35,
}

GENERATOR_DEFAULTS = {
    "recall": 0.7,
    "precision": 0.6,
    "learn_rate": 0.12,
    "initial_skill": 0.1,
    "coverage_floor": 0.35,
}

_TP_SCORE_BASE = 0.12
_TP_SCORE_SPREAD = 0.23
_FP_TAIL = 0.08


class UnsupportedOperation(Exception):
    """Raised for ops this adapter does not implement."""


class AdapterFault(Exception):
    """Adapter-level failure reported on the wire (ok=false)."""


def derive_seed(*parts: object) -> int:
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def category_sentence(name: str) -> list[str]:
    return ["there", "is", "evidence", "of", *name.split("_"), "."]


def normal_sentence() -> list[str]:
    return ["no", "acute", "findings", "."]


def compose_report(category_names: list[str]) -> list[str]:
    if not category_names:
        return normal_sentence()
    tokens: list[str] = []
    for name in category_names:
        tokens.extend(category_sentence(name))
    return tokens


def _clip_box(
    x0: float, y0: float, x1: float, y1: float, width: float, height: float
) -> list[float]:
    x0 = min(max(x0, 0.0), width - 1.0)
    y0 = min(max(y0, 0.0), height - 1.0)
    x1 = min(max(x1, x0 + 1.0), width)
    y1 = min(max(y1, y0 + 1.0), height)
    return [x0, y0, x1, y1]


class SimulatedModel:
    """One simulated adapter; the role is fixed by the init payload."""

    def __init__(self) -> None:
        self.role: str | None = None
        self.seed = 0
        self.skill = 0.0
        self.params: dict = {}
        self.categories: list[str] = []
        self.embed_dim = 0
        self.train_pool_size = 1
        self.ground_truth: dict = {}

    KNOWN_OPS = ("init", "detect", "generate", "embed", "train_epoch", "reinit", "shutdown")

    def handle(self, op: str, payload: dict) -> dict:
        if op not in self.KNOWN_OPS:
            raise UnsupportedOperation(op)
        if op == "init":
            return self._init(payload)
        if self.role is None:
            raise AdapterFault("not initialized")
        if op == "detect":
            self._require_role("detector")
            return {"detections": self._detect(self._sample_id(payload))}
        if op == "generate":
            self._require_role("generator")
            return self._generate(payload)
        if op == "embed":
            self._require_role("generator")
            return {"vector": self._embed(self._sample_id(payload))}
        if op == "train_epoch":
            return self._train_epoch(payload)
        if op == "reinit":
            seed = payload.get("seed")
            if not isinstance(seed, int):
                raise AdapterFault("reinit requires an integer seed")
            self.seed = seed
            self.skill = float(self.params["initial_skill"])
            return {"skill": self.skill}
        assert op == "shutdown"
        return {}

    def _require_role(self, role: str) -> None:
        if self.role != role:
            raise AdapterFault(f"op requires role {role}")

    @staticmethod
    def _sample_id(payload: dict) -> str:
        sid = payload.get("sample_id")
        if not isinstance(sid, str):
            raise AdapterFault("missing sample_id")
        return sid

    def _init(self, payload: dict) -> dict:
        if payload.get("protocol") != PROTOCOL_VERSION:
            raise AdapterFault("version mismatch")
        role = payload.get("role")
        if role not in ("detector", "generator"):
            raise AdapterFault(f"unknown role: {role}")
        self.role = role
        self.seed = int(payload.get("seed", 0))
        self.categories = list(payload.get("categories") or [])
        if len(self.categories) < 2:
            raise AdapterFault("category table must list background plus one category")
        defaults = DETECTOR_DEFAULTS if role == "detector" else GENERATOR_DEFAULTS
        self.params = {**defaults, **(payload.get("params") or {})}
        self.embed_dim = int(payload.get("embed_dim", 16))
        self.train_pool_size = max(1, int(payload.get("train_pool_size", 1)))
        self.ground_truth = payload.get("ground_truth") or {}
        self.skill = float(self.params["initial_skill"])
        return {
            "protocol": PROTOCOL_VERSION,
            "role": self.role,
            "skill": self.skill,
            "embed_dim": self.embed_dim,
        }

    def _gt_entry(self, sample_id: str) -> dict:
        entry = self.ground_truth.get(sample_id)
        if entry is None:
            raise AdapterFault(f"unknown sample: {sample_id}")
        return entry

    def _true_categories(self, sample_id: str) -> set[int]:
        return {b["category"] for b in self._gt_entry(sample_id)["boxes"]}

    def _detect(self, sample_id: str) -> list[dict]:
        entry = self._gt_entry(sample_id)
        width, height = entry["width"], entry["height"]
        noise = 1.0 - self.skill
        rng = random.Random(derive_seed(self.seed, "detect", sample_id))
        dets = []
        for box in entry["boxes"]:
            dropped = rng.random() < self.params["drop"] * noise
            jit = [rng.gauss(0.0, self.params["sigma"] * noise) for _ in range(4)]
            u = rng.random()
            if dropped:
                continue
            coords = _clip_box(
                box["x0"] + jit[0],
                box["y0"] + jit[1],
                box["x1"] + jit[2],
                box["y1"] + jit[3],
                width,
                height,
            )
            score = 1.0 - noise * (_TP_SCORE_BASE + _TP_SCORE_SPREAD * u)
            dets.append({"category": box["category"], "box": coords, "score": score})
        lam = self.params["fp_rate"] * noise
        n_fp = int(lam) + (1 if rng.random() < lam - int(lam) else 0)
        n_cats = len(self.categories) - 1
        for _ in range(n_fp):
            cat = rng.randint(1, n_cats)
            cx = rng.uniform(0.15, 0.85) * width
            cy = rng.uniform(0.15, 0.85) * height
            bw = rng.uniform(0.08, 0.3) * width
            bh = rng.uniform(0.08, 0.3) * height
            coords = _clip_box(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2, width, height)
            u = rng.random()
            v = rng.random()
            if u < _FP_TAIL:
                score = 0.902 + 0.09 * v
            else:
                score = 0.3 + 0.6 * v
            dets.append({"category": cat, "box": coords, "score": score})
        return dets

    def _category_scores(self, sample_id: str) -> tuple[list[int], list[float]]:
        true_cats = self._true_categories(sample_id)
        rng = random.Random(derive_seed(self.seed, "cats", sample_id))
        recall = self.params["recall"]
        precision = self.params["precision"]
        recall_eff = recall + (1.0 - recall) * self.skill
        precision_eff = precision + (1.0 - precision) * self.skill
        predicted = []
        probs = []
        for cat in range(1, len(self.categories)):
            x = rng.random()
            if cat in true_cats:
                hit = x < recall_eff
            else:
                hit = x < 1.0 - precision_eff
            v = rng.random()
            if hit:
                predicted.append(cat)
                probs.append(0.55 + 0.4 * v)
            else:
                probs.append(0.05 + 0.4 * v)
        return predicted, probs

    def _generate(self, payload: dict) -> dict:
        dip = payload.get("dip") or {}
        sid = dip.get("sample_id")
        if not isinstance(sid, str):
            raise AdapterFault("dip input missing sample_id")
        _, probs = self._category_scores(sid)
        slot_cats = sorted(
            {
                s["category"]
                for s in dip.get("slots", [])
                if s.get("kind") == "abnormality" and s.get("category", 0) != 0
            }
        )
        if slot_cats:
            report = compose_report([self.categories[c] for c in slot_cats])
        else:
            report = normal_sentence()
        reference = payload.get("reference")
        token_probs = None
        if reference is not None:
            own = set(report)
            token_probs = [0.9 if tok in own else 0.1 for tok in reference]
        return {"category_probs": probs, "report": report, "token_probs": token_probs}

    def _embed(self, sample_id: str) -> list[float]:
        rng = random.Random(derive_seed(self.seed, "embed", sample_id))
        return [rng.uniform(-1.0, 1.0) for _ in range(self.embed_dim)]

    def _train_epoch(self, payload: dict) -> dict:
        if self.role == "detector":
            asserted, correct, seen = self._detector_label_stats(payload)
        else:
            asserted, correct, seen = self._generator_target_stats(payload)
        precision = correct / asserted if asserted else 0.0
        coverage = min(1.0, len(seen) / self.train_pool_size)
        floor = self.params["coverage_floor"]
        ceiling = precision * (floor + (1.0 - floor) * coverage)
        self.skill += self.params["learn_rate"] * max(0.0, ceiling - self.skill)
        loss = (1.0 - precision) + (1.0 - self.skill)
        return {"loss": loss, "samples_seen": len(seen), "skill": self.skill}

    def _detector_label_stats(self, payload: dict) -> tuple[int, int, set[str]]:
        asserted = 0
        correct = 0
        seen: set[str] = set()
        for entry in payload.get("labels") or []:
            sid = entry["sample_id"]
            true_cats = self._true_categories(sid)
            seen.add(sid)
            for det in entry["detections"]:
                asserted += 1
                if det["category"] in true_cats:
                    correct += 1
        return asserted, correct, seen

    def _generator_target_stats(self, payload: dict) -> tuple[int, int, set[str]]:
        asserted = 0
        correct = 0
        seen: set[str] = set()
        for entry in payload.get("samples") or []:
            sid = entry["sample_id"]
            true_cats = self._true_categories(sid)
            seen.add(sid)
            for idx, flag in enumerate(entry["target"]):
                if flag == 1:
                    asserted += 1
                    if (idx + 1) in true_cats:
                        correct += 1
        return asserted, correct, seen
