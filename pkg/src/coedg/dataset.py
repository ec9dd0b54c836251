"""Data model, ingestion, splitting, batch sampling, and synthetic data.

File formats:
  annotations.json:  JSON list of {sample_id, width, height,
                      annotations: [{category, x0, y0, x1, y1}]};
                      presence of a record makes the sample fully labeled.
  reports.jsonl:     one JSON object per line, {sample_id, width, height,
                      report}; every sample has a report.
  ground_truth.json: same record shape as annotations.json but covering all
                      samples; consumed by oracle adapters and evaluation.
  categories.json:   {"names": [...]} with index 0 reserved for background.
"""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

from .geometry import BBox

Annotation = tuple[int, BBox]  # (category, box)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

# Synthetic category names; generic names are generated past this list.
_FINDING_NAMES = [
    "cardiomegaly",
    "lung_opacity",
    "edema",
    "consolidation",
    "pneumonia",
    "atelectasis",
    "pneumothorax",
    "pleural_effusion",
    "fibrosis",
    "nodule",
    "emphysema",
    "hernia",
]


@dataclass(frozen=True)
class Sample:
    """One study: image metadata, report tokens, optional box annotations."""

    sample_id: str
    width: int
    height: int
    report: tuple[str, ...]
    annotations: Optional[tuple[Annotation, ...]] = None

    @property
    def labeled(self) -> bool:
        return self.annotations is not None

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"{self.sample_id}: non-positive image dims")
        for cat, box in self.annotations or ():
            if box.x1 > self.width or box.y1 > self.height:
                raise ValueError(
                    f"{self.sample_id}: box {box} out of image bounds"
                )


@dataclass(frozen=True)
class CategoryTable:
    """Ordered category names; index 0 is the background class."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.names or self.names[0] != "background":
            raise ValueError("index 0 must be the background category")
        if len(set(self.names)) != len(self.names):
            raise ValueError("category names must be unique")

    @property
    def num_categories(self) -> int:
        """Number of non-background categories."""
        return len(self.names) - 1

    def name_of(self, category: int) -> str:
        return self.names[category]

    @classmethod
    def synthetic(cls, n_categories: int) -> "CategoryTable":
        names = ["background"]
        for k in range(n_categories):
            if k < len(_FINDING_NAMES):
                names.append(_FINDING_NAMES[k])
            else:
                names.append(f"finding_{k + 1}")
        return cls(tuple(names))


@dataclass(frozen=True)
class Batch:
    labeled_ids: tuple[str, ...]
    weak_ids: tuple[str, ...]


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace with punctuation isolated."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Token table built over a training corpus with an OOV fallback."""

    tokens: tuple[str, ...]
    oov_token: str = "<unk>"
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_index", {t: i for i, t in enumerate(self.tokens)}
        )

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self.tokens)

    def normalize(self, tokens: Sequence[str]) -> list[str]:
        return [t if t in self._index else self.oov_token for t in tokens]


def build_vocabulary(
    corpora: Sequence[Sequence[str]], min_freq: int = 3, oov_token: str = "<unk>"
) -> Vocabulary:
    """Vocabulary of tokens appearing at least ``min_freq`` times."""
    counts: Counter = Counter()
    for tokens in corpora:
        counts.update(tokens)
    kept = sorted(t for t, c in counts.items() if c >= min_freq)
    return Vocabulary(tokens=(oov_token, *kept), oov_token=oov_token)


def _parse_annotation_record(record: dict, where: str) -> tuple[str, int, int, tuple[Annotation, ...]]:
    try:
        sid = record["sample_id"]
        width = int(record["width"])
        height = int(record["height"])
        anns = []
        for a in record["annotations"]:
            anns.append(
                (int(a["category"]), BBox(a["x0"], a["y0"], a["x1"], a["y1"]))
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{where}: malformed record: {exc}") from exc
    return sid, width, height, tuple(anns)


def load_annotation_file(path: str | Path) -> dict[str, tuple[int, int, tuple[Annotation, ...]]]:
    """Parse an annotations/ground-truth JSON file into a per-sample map."""
    path = Path(path)
    records = json.loads(path.read_text())
    out = {}
    for i, record in enumerate(records):
        sid, width, height, anns = _parse_annotation_record(
            record, f"{path}: record {i}"
        )
        for cat, box in anns:
            if box.x1 > width or box.y1 > height:
                raise ValueError(f"{path}: sample {sid}: box out of bounds")
        out[sid] = (width, height, anns)
    return out


def load_dataset(
    annotation_file: str | Path,
    report_file: str | Path,
    category_table: CategoryTable,
    category_filter: Optional[Callable[[frozenset[int]], bool]] = None,
) -> list[Sample]:
    """Materialize samples from a report file plus an annotation file.

    Samples present in the annotation file become fully labeled; all others
    are weakly labeled (report only). Annotation categories must exist in
    the category table. ``category_filter``, when given, is called with each
    labeled sample's category set and drops the sample (annotations and
    report) when it returns False; weakly labeled samples carry no category
    information and always pass.
    """
    annotations = load_annotation_file(annotation_file)
    dropped: set[str] = set()
    for sid, (_, _, anns) in annotations.items():
        for cat, _ in anns:
            if not (1 <= cat <= category_table.num_categories):
                raise ValueError(f"sample {sid}: unknown category {cat}")
        if category_filter is not None:
            if not category_filter(frozenset(c for c, _ in anns)):
                dropped.add(sid)
    for sid in dropped:
        del annotations[sid]

    report_path = Path(report_file)
    samples: list[Sample] = []
    seen: set[str] = set()
    with report_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                sid = record["sample_id"]
                width = int(record["width"])
                height = int(record["height"])
                report = tuple(record["report"])
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(
                    f"{report_path}:{lineno}: malformed record: {exc}"
                ) from exc
            if sid in dropped:
                continue
            anns = None
            if sid in annotations:
                a_width, a_height, anns = annotations[sid]
                if (a_width, a_height) != (width, height):
                    raise ValueError(f"sample {sid}: inconsistent image dims")
            samples.append(Sample(sid, width, height, report, anns))
            seen.add(sid)
    if not samples:
        raise ValueError("no reports")
    missing = set(annotations) - seen
    if missing:
        raise ValueError(f"annotated samples missing reports: {sorted(missing)[:10]}")
    return samples


def save_dataset(
    samples: Sequence[Sample],
    annotation_file: str | Path,
    report_file: str | Path,
) -> None:
    """Inverse of load_dataset; load(save(samples)) round-trips."""
    ann_records = []
    report_lines = []
    for s in samples:
        report_lines.append(
            json.dumps(
                {
                    "sample_id": s.sample_id,
                    "width": s.width,
                    "height": s.height,
                    "report": list(s.report),
                },
                sort_keys=True,
            )
        )
        if s.labeled:
            ann_records.append(_annotation_record(s.sample_id, s.width, s.height, s.annotations or ()))
    Path(annotation_file).write_text(json.dumps(ann_records, indent=2, sort_keys=True))
    Path(report_file).write_text("\n".join(report_lines) + "\n")


def _annotation_record(
    sid: str, width: int, height: int, anns: Sequence[Annotation]
) -> dict:
    return {
        "sample_id": sid,
        "width": width,
        "height": height,
        "annotations": [
            {"category": cat, "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1}
            for cat, b in anns
        ],
    }


def _quota_split(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment; ties favor the larger quota."""
    floors = [int(n * f) for f in fractions]
    remainder = n - sum(floors)
    fracs = sorted(
        range(len(fractions)),
        key=lambda i: (-(n * fractions[i] - floors[i]), -fractions[i]),
    )
    for i in range(remainder):
        floors[fracs[i]] += 1
    return floors


def split(
    samples: Sequence[Sample], seed: int, fractions: Sequence[float] = (0.7, 0.1, 0.2)
) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Deterministic train/val/test split, applied separately to the labeled
    and weakly labeled pools so both keep the configured proportions."""
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ValueError("fractions must be three values summing to 1")
    out: tuple[list[Sample], list[Sample], list[Sample]] = ([], [], [])
    for pool_labeled in (True, False):
        pool = sorted(
            (s for s in samples if s.labeled == pool_labeled),
            key=lambda s: s.sample_id,
        )
        rng = random.Random(seed if pool_labeled else seed + 1)
        rng.shuffle(pool)
        n_train, n_val, _ = _quota_split(len(pool), fractions)
        out[0].extend(pool[:n_train])
        out[1].extend(pool[n_train : n_train + n_val])
        out[2].extend(pool[n_train + n_val :])
    return out


def batch_sampler(
    labeled_pool: Sequence[str],
    weak_pool: Sequence[str],
    batch_size: int,
    ratio: tuple[int, int],
    seed: int,
) -> Iterator[Batch]:
    """One epoch of batches honoring a labeled:weak ratio.

    The epoch walks the weak pool once in shuffled order (every weak sample
    appears at least once); labeled samples are resampled with replacement to
    fill their share. With ratio (r, 0) the epoch walks the labeled pool
    instead (supervised pretraining). Deterministic per seed.
    """
    r_lab, r_weak = ratio
    if r_lab < 0 or r_weak < 0 or (r_lab == 0 and r_weak == 0):
        raise ValueError(f"invalid ratio: {ratio}")
    if batch_size % (r_lab + r_weak) != 0:
        raise ValueError(
            f"batch_size {batch_size} not divisible by ratio total {r_lab + r_weak}"
        )
    unit = batch_size // (r_lab + r_weak)
    n_lab = r_lab * unit
    n_weak = r_weak * unit
    rng = random.Random(seed)

    if n_weak == 0:
        if not labeled_pool:
            raise ValueError("empty labeled pool")
        order = list(labeled_pool)
        rng.shuffle(order)
        for i in range(0, len(order), n_lab):
            yield Batch(tuple(order[i : i + n_lab]), ())
        return

    if not weak_pool:
        raise ValueError("empty weak pool")
    if n_lab > 0 and not labeled_pool:
        raise ValueError("empty labeled pool")
    order = list(weak_pool)
    rng.shuffle(order)
    for i in range(0, len(order), n_weak):
        weak_ids = tuple(order[i : i + n_weak])
        labeled_ids = tuple(
            rng.choice(labeled_pool) for _ in range(n_lab)
        ) if n_lab else ()
        yield Batch(labeled_ids, weak_ids)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic dataset generator."""

    n_samples: int = 500
    n_categories: int = 8
    image_width: int = 512
    image_height: int = 512
    # Probability of an image carrying 0..5 ground-truth boxes.
    boxes_per_image_dist: tuple[float, ...] = (0.2, 0.3, 0.22, 0.15, 0.08, 0.05)
    labeled_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.n_samples < 1 or self.n_categories < 1:
            raise ValueError("n_samples and n_categories must be >= 1")
        if not (0.0 <= self.labeled_fraction <= 1.0):
            raise ValueError("labeled_fraction must be in [0, 1]")
        if abs(sum(self.boxes_per_image_dist) - 1.0) > 1e-9:
            raise ValueError("boxes_per_image_dist must sum to 1")


@dataclass(frozen=True)
class SyntheticDataset:
    """Samples plus the full ground truth kept aside for oracles/evaluation."""

    samples: tuple[Sample, ...]
    ground_truth: dict[str, tuple[Annotation, ...]]
    categories: CategoryTable


def category_sentence(name: str) -> list[str]:
    """Template sentence announcing one finding; shared with the simulator."""
    return ["there", "is", "evidence", "of", *name.split("_"), "."]


def normal_sentence() -> list[str]:
    return ["no", "acute", "findings", "."]


def compose_report(category_names: Sequence[str]) -> list[str]:
    """Report tokens for a set of findings (ascending-category order)."""
    if not category_names:
        return normal_sentence()
    tokens: list[str] = []
    for name in category_names:
        tokens.extend(category_sentence(name))
    return tokens


def _category_box(
    rng: random.Random, category: int, width: int, height: int
) -> BBox:
    """One box drawn from the category's characteristic size/position."""
    anchor = random.Random(f"category-profile:{category}")
    cx_mu = anchor.uniform(0.3, 0.7)
    cy_mu = anchor.uniform(0.3, 0.7)
    w_mu = anchor.uniform(0.12, 0.3)
    h_mu = anchor.uniform(0.12, 0.3)
    cx = min(max(rng.gauss(cx_mu, 0.08), 0.12), 0.88) * width
    cy = min(max(rng.gauss(cy_mu, 0.08), 0.12), 0.88) * height
    w = min(max(rng.gauss(w_mu, 0.04), 0.06), 0.45) * width
    h = min(max(rng.gauss(h_mu, 0.04), 0.06), 0.45) * height
    x0 = max(0.0, cx - w / 2)
    y0 = max(0.0, cy - h / 2)
    x1 = min(float(width), cx + w / 2)
    y1 = min(float(height), cy + h / 2)
    return BBox(round(x0, 2), round(y0, 2), round(max(x1, x0 + 4), 2), round(max(y1, y0 + 4), 2))


def synth_dataset(config: SynthConfig, seed: int) -> SyntheticDataset:
    """Seeded synthetic dataset with category-consistent reports.

    A category appears in a sample's annotations iff its template sentence
    appears in the report, which is the consistency the generator-guided
    filter exploits.
    """
    rng = random.Random(seed)
    table = CategoryTable.synthetic(config.n_categories)
    counts = list(range(len(config.boxes_per_image_dist)))
    samples: list[Sample] = []
    ground_truth: dict[str, tuple[Annotation, ...]] = {}

    n_labeled = round(config.n_samples * config.labeled_fraction)
    labeled_ids = set(rng.sample(range(config.n_samples), n_labeled))

    for i in range(config.n_samples):
        sid = f"synth-{i:05d}"
        n_boxes = rng.choices(counts, weights=config.boxes_per_image_dist)[0]
        cats = sorted(
            rng.sample(range(1, config.n_categories + 1), min(n_boxes, config.n_categories))
        )
        anns: list[Annotation] = []
        for cat in cats:
            anns.append((cat, _category_box(rng, cat, config.image_width, config.image_height)))
            # Occasionally a second box of the same finding.
            if rng.random() < 0.15:
                anns.append((cat, _category_box(rng, cat, config.image_width, config.image_height)))
        report = tuple(compose_report([table.name_of(c) for c in cats]))
        annotations = tuple(anns) if i in labeled_ids else None
        samples.append(
            Sample(sid, config.image_width, config.image_height, report, annotations)
        )
        ground_truth[sid] = tuple(anns)
    return SyntheticDataset(tuple(samples), ground_truth, table)


def write_synth_dir(dataset: SyntheticDataset, out_dir: str | Path) -> None:
    """Write annotations.json, reports.jsonl, ground_truth.json, categories.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset.samples, out / "annotations.json", out / "reports.jsonl")
    gt_records = [
        _annotation_record(s.sample_id, s.width, s.height, dataset.ground_truth[s.sample_id])
        for s in dataset.samples
    ]
    (out / "ground_truth.json").write_text(json.dumps(gt_records, indent=2, sort_keys=True))
    (out / "categories.json").write_text(
        json.dumps({"names": list(dataset.categories.names)}, indent=2)
    )


def load_dataset_dir(data_dir: str | Path) -> SyntheticDataset:
    """Load a dataset directory produced by write_synth_dir / make-synth."""
    data = Path(data_dir)
    table = CategoryTable(
        tuple(json.loads((data / "categories.json").read_text())["names"])
    )
    samples = load_dataset(data / "annotations.json", data / "reports.jsonl", table)
    gt_path = data / "ground_truth.json"
    ground_truth: dict[str, tuple[Annotation, ...]] = {}
    if gt_path.exists():
        for sid, (_, _, anns) in load_annotation_file(gt_path).items():
            ground_truth[sid] = anns
    else:
        ground_truth = {
            s.sample_id: s.annotations for s in samples if s.labeled
        }
    return SyntheticDataset(tuple(samples), ground_truth, table)
