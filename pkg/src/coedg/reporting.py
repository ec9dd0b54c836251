"""Markdown/CSV table emitters and the run manifest."""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .metrics import DetEvalResult, RepEvalResult


def markdown_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(["---"] * len(header)) + "|")
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def det_eval_table(
    result: DetEvalResult, category_names: Optional[Mapping[int, str]] = None
) -> str:
    """Per-category AP with a mean row, one column per IoU threshold."""
    thresholds = sorted(result.mean)
    header = ["category"] + [f"AP@{t:g}" for t in thresholds]
    categories = sorted(result.per_category[thresholds[0]]) if thresholds else []
    rows = []
    for cat in categories:
        name = category_names[cat] if category_names else str(cat)
        rows.append(
            [name] + [f"{result.per_category[t][cat]:.4f}" for t in thresholds]
        )
    rows.append(["mAP"] + [f"{result.mean[t]:.4f}" for t in thresholds])
    return markdown_table(header, rows)


def rep_eval_table(result: RepEvalResult) -> str:
    header = ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L", "AUC", "p (Wilcoxon)"]
    row = [
        f"{result.bleu1:.4f}",
        f"{result.bleu2:.4f}",
        f"{result.bleu3:.4f}",
        f"{result.bleu4:.4f}",
        f"{result.rougeL:.4f}",
        "n/a" if result.auc is None else f"{result.auc:.4f}",
        "n/a" if result.wilcoxon_p is None else f"{result.wilcoxon_p:.4f}",
    ]
    return markdown_table(header, [row])


def iteration_summary_table(records: Sequence) -> str:
    """One row per co-evolution iteration (mAP columns, BLEU-4, pseudo precision)."""
    if not records:
        return ""
    thresholds = sorted(records[0].det.mean)
    header = (
        ["iteration"]
        + [f"mAP@{t:g}" for t in thresholds]
        + ["BLEU-4", "ROUGE-L", "pseudo precision"]
    )
    rows = []
    for r in records:
        rows.append(
            [str(r.iteration)]
            + [f"{r.det.mean[t]:.4f}" for t in thresholds]
            + [f"{r.rep.bleu4:.4f}", f"{r.rep.rougeL:.4f}", f"{r.pseudo_precision:.4f}"]
        )
    return markdown_table(header, rows)


def sweep_table(taus: Sequence[float], results: Sequence[DetEvalResult]) -> str:
    """Threshold-sweep grid: one row per tau, one column per IoU threshold."""
    thresholds = sorted(results[0].mean)
    header = ["tau"] + [f"mAP@{t:g}" for t in thresholds]
    rows = [
        [f"{tau:.2f}"] + [f"{res.mean[t]:.4f}" for t in thresholds]
        for tau, res in zip(taus, results)
    ]
    return markdown_table(header, rows)


def sweep_csv(taus: Sequence[float], results: Sequence[DetEvalResult]) -> str:
    thresholds = sorted(results[0].mean)
    lines = [",".join(["tau"] + [f"map@{t:g}" for t in thresholds])]
    for tau, res in zip(taus, results):
        lines.append(",".join([f"{tau:.2f}"] + [f"{res.mean[t]:.6f}" for t in thresholds]))
    return "\n".join(lines) + "\n"


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    run_dir: Path,
    config: dict,
    seeds: Sequence[int],
    started: datetime,
    version: str,
) -> Path:
    """Inventory of the run directory with content digests."""
    files = {}
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[str(path.relative_to(run_dir))] = file_digest(path)
    manifest = {
        "config": config,
        "seeds": list(seeds),
        "version": version,
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": files,
    }
    out = run_dir / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def verify_manifest(run_dir: Path) -> list[str]:
    """Return the files whose digest no longer matches the manifest."""
    manifest = json.loads((run_dir / "manifest.json").read_text())
    bad = []
    for rel, digest in manifest["files"].items():
        path = run_dir / rel
        if not path.is_file() or file_digest(path) != digest:
            bad.append(rel)
    return bad
