"""Box algebra, IoU, greedy class-aware NMS, and the teacher/student merge."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence


class Source(str, enum.Enum):
    """Origin of a detection within the distillation pipeline."""

    TEACHER = "teacher"
    STUDENT = "student"
    GROUND_TRUTH = "ground-truth"
    MERGED = "merged"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates, origin top-left.

    Invariants: ``x0 < x1``, ``y0 < y1``, all coordinates finite and >= 0.
    """

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates: {coords}")
        if any(c < 0 for c in coords):
            raise ValueError(f"negative box coordinates: {coords}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box: {coords}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Detection:
    """A categorized, scored box. Category 0 is reserved for background."""

    category: int
    box: BBox
    score: float
    source: Source = Source.STUDENT

    def __post_init__(self) -> None:
        if self.category < 0:
            raise ValueError(f"negative category id: {self.category}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score outside [0, 1]: {self.score}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; exact area arithmetic.

    Symmetric, 0 for disjoint boxes, 1 for identical boxes. Raises on a
    zero-area box (unreachable through the BBox constructor, guarded anyway).
    """
    if a.area <= 0.0 or b.area <= 0.0:
        raise ValueError("degenerate box")
    ix0 = max(a.x0, b.x0)
    iy0 = max(a.y0, b.y0)
    ix1 = min(a.x1, b.x1)
    iy1 = min(a.y1, b.y1)
    iw = ix1 - ix0
    ih = iy1 - iy0
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _nms_order(det: Detection) -> tuple:
    # Descending score; ties broken by (category, x0, y0) ascending for
    # deterministic output on equal-score inputs.
    return (-det.score, det.category, det.box.x0, det.box.y0)


def nms(dets: Sequence[Detection], iou_thr: float) -> list[Detection]:
    """Greedy class-aware non-maximum suppression.

    Processes detections in descending score order and keeps one iff its IoU
    with every already-kept detection of the *same category* is <= iou_thr.
    Output is sorted by descending score.
    """
    kept: list[Detection] = []
    for det in sorted(dets, key=_nms_order):
        if all(
            iou(det.box, k.box) <= iou_thr
            for k in kept
            if k.category == det.category
        ):
            kept.append(det)
    return kept


def sa_nms(
    teacher: Iterable[Detection],
    student: Iterable[Detection],
    iou_thr: float,
) -> list[Detection]:
    """Merge teacher pseudo labels with student predictions via NMS.

    Runs plain NMS on the union of both sets, so a confident student box
    suppresses an overlapping lower-scored teacher box (and vice versa).
    Survivors keep their original source tag.
    """
    return nms([*teacher, *student], iou_thr)
