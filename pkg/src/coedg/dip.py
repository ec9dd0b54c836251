"""Generator-input construction from detections.

Each detection becomes a slot carrying the crop rectangle (the region the
generator adapter embeds itself; the engine stays image-codec-free) and a
quantized location embedding. Slots are padded with NULL entries to a fixed
length, and a class-token position is always present for the multi-label
head. Also builds the multi-hot classification targets for that head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .dataset import Sample
from .geometry import BBox, Detection, Source

DEFAULT_SLOTS = 5


@dataclass(frozen=True)
class LocationEmbedding:
    """Floor-quantized percentage coordinates, each in [0, 100]."""

    q0: int
    q1: int
    q2: int
    q3: int

    def __post_init__(self) -> None:
        qs = (self.q0, self.q1, self.q2, self.q3)
        if any(not (0 <= q <= 100) for q in qs):
            raise ValueError(f"quantized coords outside [0, 100]: {qs}")
        if self.q0 > self.q2 or self.q1 > self.q3:
            raise ValueError(f"inverted quantized box: {qs}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.q0, self.q1, self.q2, self.q3)


@dataclass(frozen=True)
class DipSlot:
    kind: str  # "abnormality" | "null"
    crop: Optional[BBox] = None
    location: Optional[LocationEmbedding] = None
    category: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind == "null":
            if not (self.crop is None and self.location is None and self.category is None):
                raise ValueError("null slots carry no content")
        elif self.kind == "abnormality":
            if self.crop is None or self.location is None or self.category is None:
                raise ValueError("abnormality slots need crop, location, category")
        else:
            raise ValueError(f"unknown slot kind: {self.kind}")


NULL_SLOT = DipSlot(kind="null")


@dataclass(frozen=True)
class DipInput:
    """Fixed-length slot sequence plus the always-present class token."""

    sample_id: str
    slots: tuple[DipSlot, ...]
    has_class_token: bool = True

    def __post_init__(self) -> None:
        seen_null = False
        for slot in self.slots:
            if slot.kind == "null":
                seen_null = True
            elif seen_null:
                raise ValueError("abnormality slots must precede null slots")

    @property
    def abnormality_slots(self) -> tuple[DipSlot, ...]:
        return tuple(s for s in self.slots if s.kind == "abnormality")

    def categories(self) -> list[int]:
        return [s.category for s in self.abnormality_slots if s.category is not None]


@dataclass(frozen=True)
class ClassificationTarget:
    """Multi-hot target over non-background categories (index 0 -> category 1)."""

    sample_id: str
    multi_hot: tuple[int, ...]


def quantize_location(box: BBox, width: float, height: float) -> LocationEmbedding:
    """Scale box corners to integer percentages of the image size, flooring."""
    if box.x0 < 0 or box.y0 < 0 or box.x1 > width or box.y1 > height:
        raise ValueError("box out of image")
    return LocationEmbedding(
        math.floor(box.x0 / width * 100),
        math.floor(box.y0 / height * 100),
        math.floor(box.x1 / width * 100),
        math.floor(box.y1 / height * 100),
    )


def ground_truth_detections(sample: Sample) -> list[Detection]:
    """Annotations of a fully labeled sample as score-1.0 detections."""
    if not sample.labeled:
        raise ValueError(f"{sample.sample_id} is not fully labeled")
    return [
        Detection(category=cat, box=box, score=1.0, source=Source.GROUND_TRUTH)
        for cat, box in sample.annotations or ()
    ]


def build_dip_input(
    sample: Sample,
    detections: Sequence[Detection],
    source: str,
    num_slots: int = DEFAULT_SLOTS,
) -> DipInput:
    """One slot per detection, highest scores first, NULL-padded to length.

    ``source`` is "ground-truth" for fully labeled samples (annotation order
    is preserved since all scores are 1.0 and the sort is stable) or
    "student-filtered" for weakly labeled ones, whose detections must already
    have passed the confidence threshold and the normal-case rule.
    """
    if num_slots < 1:
        raise ValueError(f"slot count must be >= 1, got {num_slots}")
    if source not in ("ground-truth", "student-filtered"):
        raise ValueError(f"unknown detection source: {source}")
    if source == "ground-truth" and not sample.labeled:
        raise ValueError(f"{sample.sample_id} is not fully labeled")

    ranked = sorted(detections, key=lambda d: -d.score)[:num_slots]
    slots = [
        DipSlot(
            kind="abnormality",
            crop=d.box,
            location=quantize_location(d.box, sample.width, sample.height),
            category=d.category,
        )
        for d in ranked
    ]
    slots.extend([NULL_SLOT] * (num_slots - len(slots)))
    return DipInput(sample_id=sample.sample_id, slots=tuple(slots))


def classification_targets(
    sample_id: str, detections: Sequence[Detection], num_categories: int
) -> ClassificationTarget:
    """Multi-hot vector of the non-background categories present."""
    present = {d.category for d in detections if d.category != 0}
    bad = [c for c in present if c > num_categories]
    if bad:
        raise ValueError(f"categories outside table: {sorted(bad)}")
    return ClassificationTarget(
        sample_id=sample_id,
        multi_hot=tuple(1 if c in present else 0 for c in range(1, num_categories + 1)),
    )
