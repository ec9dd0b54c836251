"""Pseudo-label assembly for weakly labeled samples.

The stage order is fixed: confidence threshold on each detector's raw
output, merge of teacher and student sets via NMS, then the generator-guided
category filter. Normal-case handling (whole-image background box, loss
exclusion) lives here too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .geometry import BBox, Detection, Source, sa_nms


@dataclass(frozen=True)
class GeneratorCategorySet:
    """Abnormality categories the report generator predicts for one sample."""

    sample_id: str
    categories: frozenset[int]

    def __post_init__(self) -> None:
        if 0 in self.categories:
            raise ValueError("background cannot be a generator category")


@dataclass(frozen=True)
class StageCounts:
    """Detections surviving each stage of the pipeline."""

    raw_teacher: int
    raw_student: int
    after_threshold: int
    after_sa_nms: int
    after_gip: int


@dataclass(frozen=True)
class PseudoLabelSet:
    """Final pseudo labels for one weakly labeled sample."""

    sample_id: str
    labels: tuple[Detection, ...]
    include_in_unsup_loss: bool
    provenance: StageCounts


def threshold_filter(dets: Sequence[Detection], tau: float) -> list[Detection]:
    """Keep detections with score strictly above tau, order preserved."""
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    return [d for d in dets if d.score > tau]


def gip_filter(
    pseudo: Sequence[Detection], gen_cats: GeneratorCategorySet
) -> list[Detection]:
    """Keep pseudo labels whose category the generator also predicts."""
    return [d for d in pseudo if d.category in gen_cats.categories]


def loss_inclusion(
    teacher: Sequence[Detection],
    student: Sequence[Detection],
    gen_cats: GeneratorCategorySet,
) -> bool:
    """Whether the sample participates in the unsupervised detection loss.

    Excluded when neither detector produced anything, or when the generator
    predicts no abnormality (the category filter would empty the set
    regardless of the detectors' output).
    """
    if not teacher and not student:
        return False
    if not gen_cats.categories:
        return False
    return True


def assemble_pseudo_labels(
    teacher: Sequence[Detection],
    student: Sequence[Detection],
    gen_cats: GeneratorCategorySet,
    tau: float,
    iou_thr: float,
) -> PseudoLabelSet:
    """Full pipeline: threshold -> teacher/student NMS merge -> category filter."""
    teacher_kept = threshold_filter(teacher, tau)
    student_kept = threshold_filter(student, tau)
    merged = sa_nms(teacher_kept, student_kept, iou_thr)
    final = gip_filter(merged, gen_cats)
    return PseudoLabelSet(
        sample_id=gen_cats.sample_id,
        labels=tuple(final),
        include_in_unsup_loss=loss_inclusion(teacher, student, gen_cats),
        provenance=StageCounts(
            raw_teacher=len(teacher),
            raw_student=len(student),
            after_threshold=len(teacher_kept) + len(student_kept),
            after_sa_nms=len(merged),
            after_gip=len(final),
        ),
    )


def normal_case_detection(
    dets: Sequence[Detection], width: float, height: float
) -> list[Detection]:
    """Substitute a whole-image background box when nothing was detected.

    The sentinel score 1.0 marks the box as rule-generated; it is produced
    after thresholding and never filtered.
    """
    if width <= 0 or height <= 0:
        raise ValueError("image dims must be positive")
    if dets:
        return list(dets)
    return [
        Detection(
            category=0,
            box=BBox(0.0, 0.0, float(width), float(height)),
            score=1.0,
            source=Source.STUDENT,
        )
    ]
