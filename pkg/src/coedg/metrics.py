"""Evaluation stack: VOC-style AP/mAP, BLEU, ROUGE-L, macro AUC, Wilcoxon.

Detections are grouped per sample id; matching is greedy in score order
within each sample, class by class. AP is integrated in exact rational
arithmetic so results are reproducible bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .geometry import BBox, Detection, iou

GroundTruth = tuple[int, BBox]  # (category, box)


@dataclass(frozen=True)
class DetEvalResult:
    """Per-category AP and per-threshold mAP (mean over categories with GT)."""

    per_category: dict[float, dict[int, float]]
    mean: dict[float, float]

    def map_at(self, thr: float) -> float:
        return self.mean[thr]


@dataclass(frozen=True)
class RepEvalResult:
    """Report-generation metrics; all values live in [0, 1]."""

    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rougeL: float
    auc: float
    wilcoxon_p: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "rougeL": self.rougeL,
            "auc": self.auc,
            "wilcoxon_p": self.wilcoxon_p,
        }


def _match_predictions(
    preds: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[GroundTruth]],
    category: int,
    iou_thr: float,
) -> tuple[list[bool], int]:
    """Greedy TP/FP assignment for one category across all samples.

    Predictions are ranked by descending score (ties keep input order); each
    one matches the highest-IoU unmatched ground-truth box of its sample with
    IoU >= iou_thr, else counts as a false positive. Returns the ranked
    TP flags and the total ground-truth count.
    """
    ranked: list[tuple[float, int, str, Detection]] = []
    order = 0
    for sid, dets in preds.items():
        for det in dets:
            if det.category == category:
                ranked.append((-det.score, order, sid, det))
                order += 1
    ranked.sort(key=lambda r: (r[0], r[1]))

    gt_boxes: dict[str, list[BBox]] = {}
    for sid, anns in gts.items():
        gt_boxes[sid] = [box for cat, box in anns if cat == category]
    n_gt = sum(len(v) for v in gt_boxes.values())

    matched: dict[str, list[bool]] = {sid: [False] * len(v) for sid, v in gt_boxes.items()}
    tp_flags: list[bool] = []
    for _, _, sid, det in ranked:
        best_iou = 0.0
        best_idx = -1
        for idx, box in enumerate(gt_boxes.get(sid, [])):
            if matched[sid][idx]:
                continue
            overlap = iou(det.box, box)
            if overlap > best_iou:
                best_iou = overlap
                best_idx = idx
        if best_idx >= 0 and best_iou >= iou_thr:
            matched[sid][best_idx] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    return tp_flags, n_gt


def _ap_from_flags(
    tp_flags: Sequence[bool], n_gt: int, interpolation: str
) -> float:
    """Area under the precision-recall curve, in exact rational arithmetic."""
    if n_gt == 0:
        raise ValueError("no ground truth for category")
    recalls: list[Fraction] = []
    precisions: list[Fraction] = []
    tp = 0
    for i, flag in enumerate(tp_flags):
        if flag:
            tp += 1
        recalls.append(Fraction(tp, n_gt))
        precisions.append(Fraction(tp, i + 1))

    if interpolation == "11point":
        ap = Fraction(0)
        for k in range(11):
            r = Fraction(k, 10)
            best = max(
                (p for rec, p in zip(recalls, precisions) if rec >= r),
                default=Fraction(0),
            )
            ap += best / 11
        return float(ap)
    if interpolation != "all":
        raise ValueError(f"unknown interpolation: {interpolation}")

    # All-point: make precision monotone non-increasing from the right, then
    # sum rectangle areas at recall steps.
    env = list(precisions)
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    ap = Fraction(0)
    prev_r = Fraction(0)
    for r, p in zip(recalls, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def average_precision(
    preds: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[GroundTruth]],
    category: int,
    iou_thr: float,
    interpolation: str = "all",
) -> float:
    """AP for one category at one IoU threshold.

    Raises ValueError when the category has no ground-truth instance (the AP
    is undefined there; mean_ap excludes such categories instead).
    """
    tp_flags, n_gt = _match_predictions(preds, gts, category, iou_thr)
    return _ap_from_flags(tp_flags, n_gt, interpolation)


def mean_ap(
    preds: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[GroundTruth]],
    thresholds: Sequence[float],
    interpolation: str = "all",
) -> DetEvalResult:
    """Per-threshold mAP over the categories with at least one GT instance."""
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    categories = sorted({cat for anns in gts.values() for cat, _ in anns})
    per_category: dict[float, dict[int, float]] = {}
    mean: dict[float, float] = {}
    for thr in thresholds:
        aps = {
            cat: average_precision(preds, gts, cat, thr, interpolation)
            for cat in categories
        }
        per_category[thr] = aps
        mean[thr] = sum(aps.values()) / len(aps) if aps else 0.0
    return DetEvalResult(per_category=per_category, mean=mean)


def _ngram_counts(tokens: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def _clipped_matches(
    candidate: Sequence[str], reference: Sequence[str], k: int
) -> tuple[int, int]:
    cand = _ngram_counts(candidate, k)
    ref = _ngram_counts(reference, k)
    matched = sum(min(c, ref.get(g, 0)) for g, c in cand.items())
    total = max(len(candidate) - k + 1, 0)
    return matched, total


def bleu(candidate: Sequence[str], reference: Sequence[str], n: int = 4) -> float:
    """Sentence BLEU-n: geometric mean of clipped k-gram precisions times
    the brevity penalty exp(min(0, 1 - |ref|/|cand|))."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not candidate:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        matched, total = _clipped_matches(candidate, reference, k)
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    bp = math.exp(min(0.0, 1.0 - len(reference) / len(candidate)))
    return bp * math.exp(log_sum / n)


def corpus_bleu(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    n: int = 4,
) -> float:
    """Corpus BLEU-n: clipped counts and lengths are pooled over the corpus
    before the geometric mean and brevity penalty are taken."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if len(candidates) != len(references):
        raise ValueError("candidate/reference count mismatch")
    cand_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        matched = 0
        total = 0
        for cand, ref in zip(candidates, references):
            m, t = _clipped_matches(cand, ref, k)
            matched += m
            total += t
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return bp * math.exp(log_sum / n)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(
    candidate: Sequence[str], reference: Sequence[str], beta: float = 1.2
) -> float:
    """ROUGE-L F-measure from the longest common subsequence."""
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return ((1.0 + beta * beta) * p * r) / (r + beta * beta * p)


def _midranks(values: Sequence[float]) -> list[float]:
    """Ranks starting at 1; tied values receive the mean of their ranks."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mid = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    return ranks


def _binary_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC AUC via the Mann-Whitney rank statistic with midranks for ties."""
    ranks = _midranks(scores)
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    rank_sum = sum(r for r, y in zip(ranks, labels) if y == 1)
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def multilabel_auc(
    scores: Sequence[Sequence[float]], labels: Sequence[Sequence[int]]
) -> float:
    """Macro-averaged per-category ROC AUC.

    ``scores[i][c]`` is the predicted probability of category c for sample i
    and ``labels`` the matching multi-hot targets. Categories lacking either
    a positive or a negative sample are skipped; if every category is
    skipped the AUC is undefined. Note the clinical-efficacy caveat: scores
    here are the category probabilities an adapter declares directly, not
    labels re-extracted from generated report text, so absolute values are
    not comparable with text-extraction-based AUC protocols.
    """
    if len(scores) != len(labels):
        raise ValueError("scores/labels count mismatch")
    if not scores:
        raise ValueError("AUC undefined")
    n_cat = len(scores[0])
    aucs = []
    for c in range(n_cat):
        col_scores = [row[c] for row in scores]
        col_labels = [row[c] for row in labels]
        n_pos = sum(col_labels)
        if n_pos == 0 or n_pos == len(col_labels):
            continue
        aucs.append(_binary_auc(col_scores, col_labels))
    if not aucs:
        raise ValueError("AUC undefined")
    return sum(aucs) / len(aucs)


def _signed_rank_statistic(diffs: Sequence[float]) -> tuple[float, list[float]]:
    """W+ (sum of ranks of positive differences) and the midranks used."""
    ranks = _midranks([abs(d) for d in diffs])
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)
    return w_plus, ranks


def _exact_signed_rank_p(diffs: Sequence[float]) -> float:
    """Exact two-sided p via the distribution of W+ over all sign patterns.

    Midranks are doubled to integers and the distribution built by dynamic
    programming, which enumerates the same 2^n assignments in polynomial
    time. p = min(1, 2*min(P(W <= w), P(W >= w))).
    """
    w_plus, ranks = _signed_rank_statistic(diffs)
    doubled = [round(2 * r) for r in ranks]
    total = sum(doubled)
    dist = [0] * (total + 1)
    dist[0] = 1
    for r2 in doubled:
        nxt = dist[:]
        for s in range(total - r2 + 1):
            if dist[s]:
                nxt[s + r2] += dist[s]
        dist = nxt
    w2 = round(2 * w_plus)
    n_all = 2 ** len(diffs)
    p_le = sum(dist[: w2 + 1]) / n_all
    p_ge = sum(dist[w2:]) / n_all
    return min(1.0, 2.0 * min(p_le, p_ge))


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _approx_signed_rank_p(diffs: Sequence[float]) -> float:
    """Normal approximation with tie correction, two-sided."""
    w_plus, ranks = _signed_rank_statistic(diffs)
    n = len(diffs)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # Tie correction: subtract sum(t^3 - t)/48 over groups of tied |d|.
    groups: dict[float, int] = {}
    for r in ranks:
        groups[r] = groups.get(r, 0) + 1
    var -= sum(t**3 - t for t in groups.values()) / 48.0
    if var <= 0:
        raise ValueError("degenerate sample")
    z = (w_plus - mean) / math.sqrt(var)
    return min(1.0, 2.0 * _normal_sf(abs(z)))


def wilcoxon_signed_rank(
    paired_diffs: Sequence[float], method: str = "auto"
) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired differences.

    Zero differences are dropped. Exact enumeration is used for n <= 20
    (method="auto"), the tie-corrected normal approximation beyond; either
    can be forced with method="exact" / "approx".
    """
    diffs = [d for d in paired_diffs if d != 0.0]
    if not diffs:
        raise ValueError("degenerate sample")
    if method == "auto":
        method = "exact" if len(diffs) <= 20 else "approx"
    if method == "exact":
        return _exact_signed_rank_p(diffs)
    if method == "approx":
        return _approx_signed_rank_p(diffs)
    raise ValueError(f"unknown method: {method}")


def category_precision(pred_categories: Sequence[int], true_categories: set[int]) -> float:
    """Fraction of predicted labels whose category is truly present.

    Localization is ignored; an empty prediction set is vacuously precise.
    """
    if not pred_categories:
        return 1.0
    hits = sum(1 for c in pred_categories if c in true_categories)
    return hits / len(pred_categories)


def category_recall(pred_categories: Sequence[int], true_categories: set[int]) -> float:
    """Fraction of truly present categories covered by the predictions."""
    if not true_categories:
        return 1.0
    found = {c for c in pred_categories if c in true_categories}
    return len(found) / len(true_categories)
