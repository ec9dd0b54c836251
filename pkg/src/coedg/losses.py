"""Reference loss terms with analytic gradients.

These are the scalar/vector forms of the detector classification and
regression losses, the generator's multi-label classification loss, and the
autoregressive report negative log-likelihood. They exist for adapter
conformance checks and the simulated training loop, not for backprop through
networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

PROB_EPS = 1e-7  # probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before logs


@dataclass(frozen=True)
class LossValue:
    """A non-negative loss with its gradient w.r.t. the prediction inputs."""

    value: float
    gradient: tuple[float, ...]

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite loss value: {self.value}")
        if not all(math.isfinite(g) for g in self.gradient):
            raise ValueError("non-finite gradient entry")


def _clamp_prob(p: float) -> float:
    return min(max(p, PROB_EPS), 1.0 - PROB_EPS)


def focal_loss(
    p: float, target: int, alpha: float = 0.25, gamma: float = 2.0
) -> LossValue:
    """Binary focal loss for one prediction.

    target=1: -alpha * (1-p)^gamma * log(p)
    target=0: -(1-alpha) * p^gamma * log(1-p)

    With gamma=0 and alpha=0.5 this reduces to half the standard binary
    cross-entropy. Gradient is taken at the clamped probability.
    """
    if target not in (0, 1):
        raise ValueError(f"target must be 0 or 1, got {target}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    p = _clamp_prob(p)
    if target == 1:
        value = -alpha * (1.0 - p) ** gamma * math.log(p)
        grad = alpha * gamma * (1.0 - p) ** (gamma - 1.0) * math.log(p) if gamma > 0 else 0.0
        grad -= alpha * (1.0 - p) ** gamma / p
    else:
        value = -(1.0 - alpha) * p**gamma * math.log(1.0 - p)
        grad = -(1.0 - alpha) * gamma * p ** (gamma - 1.0) * math.log(1.0 - p) if gamma > 0 else 0.0
        grad += (1.0 - alpha) * p**gamma / (1.0 - p)
    return LossValue(value, (grad,))


def smooth_l1(
    pred: Sequence[float], target: Sequence[float], beta: float = 1.0
) -> LossValue:
    """Elementwise smooth-L1 (Huber-style) loss, summed over components.

    Per element with d = pred - target: 0.5*d^2/beta if |d| < beta,
    else |d| - 0.5*beta.
    """
    if len(pred) != len(target):
        raise ValueError(f"arity mismatch: {len(pred)} vs {len(target)}")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    total = 0.0
    grads = []
    for p, t in zip(pred, target):
        d = p - t
        if abs(d) < beta:
            total += 0.5 * d * d / beta
            grads.append(d / beta)
        else:
            total += abs(d) - 0.5 * beta
            grads.append(math.copysign(1.0, d))
    return LossValue(total, tuple(grads))


def multilabel_cross_entropy(
    probs: Sequence[float], target: Sequence[int]
) -> LossValue:
    """Per-category binary cross-entropy, summed over categories.

    The multi-label form: sum_c -[t_c*log(p_c) + (1-t_c)*log(1-p_c)].
    """
    if len(probs) != len(target):
        raise ValueError(f"arity mismatch: {len(probs)} vs {len(target)}")
    total = 0.0
    grads = []
    for p, t in zip(probs, target):
        if t not in (0, 1):
            raise ValueError(f"target entries must be 0 or 1, got {t}")
        p = _clamp_prob(p)
        total += -(t * math.log(p) + (1 - t) * math.log(1.0 - p))
        grads.append(-t / p + (1 - t) / (1.0 - p))
    return LossValue(total, tuple(grads))


def report_nll(token_probs: Sequence[float]) -> LossValue:
    """Negative log-likelihood of a token sequence.

    ``token_probs[t]`` is the probability the generator assigned to the t-th
    reference token under teacher forcing; the loss is -sum_t log(p_t).
    """
    if len(token_probs) == 0:
        raise ValueError("empty sequence")
    total = 0.0
    grads = []
    for p in token_probs:
        p = _clamp_prob(p)
        total += -math.log(p)
        grads.append(-1.0 / p)
    return LossValue(total, tuple(grads))


@dataclass(frozen=True)
class LossPair:
    """One matched (or unmatched) prediction for the detection loss.

    ``prob`` is the predicted probability for the target class and ``target``
    its 0/1 label. Box vectors are present only for matched pairs; unmatched
    predictions contribute a classification term alone. Matching policy is
    the caller's job.
    """

    prob: float
    target: int
    pred_box: Optional[tuple[float, ...]] = None
    gt_box: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if (self.pred_box is None) != (self.gt_box is None):
            raise ValueError("pred_box and gt_box must be supplied together")


@dataclass(frozen=True)
class DetectionLossValue:
    """Total detection loss split into supervised and unsupervised sums."""

    value: float
    supervised: float
    unsupervised: float
    gradient: tuple[float, ...] = field(repr=False)


def _pairs_loss(
    pairs: Sequence[LossPair], alpha: float, gamma: float, beta: float
) -> tuple[float, list[float]]:
    total = 0.0
    grads: list[float] = []
    for pair in pairs:
        cls = focal_loss(pair.prob, pair.target, alpha, gamma)
        total += cls.value
        grads.extend(cls.gradient)
        if pair.pred_box is not None:
            assert pair.gt_box is not None
            reg = smooth_l1(pair.pred_box, pair.gt_box, beta)
            total += reg.value
            grads.extend(reg.gradient)
    return total, grads


def detection_loss(
    supervised_pairs: Sequence[LossPair],
    unsupervised_pairs: Sequence[LossPair],
    alpha: float = 0.25,
    gamma: float = 2.0,
    beta: float = 1.0,
) -> DetectionLossValue:
    """Semi-supervised detection loss: focal + smooth-L1 over both subsets.

    The supervised sum covers pairs matched against manual annotations, the
    unsupervised sum pairs matched against pseudo labels; a sample excluded
    from the unsupervised loss simply supplies no pairs. The gradient is the
    concatenation over pairs (prob first, then box components) in input
    order, supervised before unsupervised.
    """
    sup, sup_grads = _pairs_loss(supervised_pairs, alpha, gamma, beta)
    unsup, unsup_grads = _pairs_loss(unsupervised_pairs, alpha, gamma, beta)
    return DetectionLossValue(
        value=sup + unsup,
        supervised=sup,
        unsupervised=unsup,
        gradient=tuple(sup_grads + unsup_grads),
    )
