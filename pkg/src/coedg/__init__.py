"""Co-evolutionary semi-supervised abnormality-detection / report-generation
engine: pseudo-label refinement, detector-guided generator inputs, reference
losses, the evaluation stack, and a wire protocol for pluggable model
adapters (with built-in simulated ones)."""

__version__ = "0.1.0"

from .geometry import BBox, Detection, Source, iou, nms, sa_nms
from .pseudo_label import (
    GeneratorCategorySet,
    PseudoLabelSet,
    assemble_pseudo_labels,
    gip_filter,
    loss_inclusion,
    normal_case_detection,
    threshold_filter,
)
from .dip import (
    ClassificationTarget,
    DipInput,
    DipSlot,
    LocationEmbedding,
    build_dip_input,
    classification_targets,
    quantize_location,
)

__all__ = [
    "BBox",
    "ClassificationTarget",
    "Detection",
    "DipInput",
    "DipSlot",
    "GeneratorCategorySet",
    "LocationEmbedding",
    "PseudoLabelSet",
    "Source",
    "__version__",
    "assemble_pseudo_labels",
    "build_dip_input",
    "classification_targets",
    "gip_filter",
    "iou",
    "loss_inclusion",
    "nms",
    "normal_case_detection",
    "quantize_location",
    "sa_nms",
    "threshold_filter",
]
