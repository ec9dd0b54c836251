"""Command-line surface: synthetic data, co-evolution runs, offline
pseudo-label filtering, evaluation tables, and the tau sweep.

Exit codes: 0 success, 1 configuration/input error, 2 adapter failure,
3 internal error. Log level comes from the COEDG_LOG environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .adapters.protocol import AdapterError, detection_from_wire, detection_to_wire
from .coevolution import (
    CoEvoConfig,
    CoEvoRunner,
    ConfigError,
    early_metrics_curves,
)
from .dataset import (
    CategoryTable,
    SynthConfig,
    load_annotation_file,
    load_dataset_dir,
    synth_dataset,
    write_synth_dir,
)
from .geometry import Source
from .metrics import RepEvalResult, corpus_bleu, mean_ap, multilabel_auc, rouge_l, wilcoxon_signed_rank
from .pseudo_label import GeneratorCategorySet, assemble_pseudo_labels
from .reporting import (
    det_eval_table,
    iteration_summary_table,
    rep_eval_table,
    sweep_csv,
    sweep_table,
    write_manifest,
)

log = logging.getLogger("coedg.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ADAPTER = 2
EXIT_INTERNAL = 3


def _setup_logging() -> None:
    level = os.environ.get("COEDG_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: bad JSON: {exc}") from exc
    return records


def _load_predictions(path: Path) -> dict[str, list]:
    out = {}
    for record in _read_jsonl(path):
        out[record["sample_id"]] = [
            detection_from_wire(d, Source.STUDENT) for d in record["detections"]
        ]
    return out


def cmd_make_synth(args: argparse.Namespace) -> int:
    config = SynthConfig(
        n_samples=args.n_samples,
        n_categories=args.n_categories,
        image_width=args.image_size,
        image_height=args.image_size,
        labeled_fraction=args.labeled_fraction,
    )
    dataset = synth_dataset(config, args.seed)
    write_synth_dir(dataset, args.out_dir)
    print(f"wrote {args.n_samples} samples to {args.out_dir}")
    return EXIT_OK


def _load_run_config(path: Path) -> tuple[CoEvoConfig, Path]:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = json.loads(path.read_text())
    data_dir = raw.pop("dataset_dir", None)
    if data_dir is None:
        raise ConfigError("config must name a dataset_dir")
    return CoEvoConfig.from_dict(raw), Path(data_dir)


def cmd_coevolve(args: argparse.Namespace) -> int:
    config, data_dir = _load_run_config(Path(args.config))
    if args.seed is not None:
        config = CoEvoConfig.from_dict({**_config_dict(config), "seed": args.seed})
    if args.semi_oracle:
        config = CoEvoConfig.from_dict({**_config_dict(config), "semi_oracle": True})
    dataset = load_dataset_dir(data_dir)
    run_dir = Path(args.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    runner = CoEvoRunner(config, dataset, run_dir=run_dir)
    try:
        state = runner.run(resume=args.resume)
    except KeyboardInterrupt:
        print("interrupted; checkpoint preserved", file=sys.stderr)
        return 130
    finally:
        runner.close()
    _write_run_outputs(run_dir, runner, state)
    write_manifest(run_dir, _config_dict(config), [config.seed], started, __version__)
    print(f"run complete: {run_dir}")
    return EXIT_OK


def _config_dict(config: CoEvoConfig) -> dict:
    return json.loads(
        json.dumps(
            {
                "iterations": config.iterations,
                "epochs_per_iteration": config.epochs_per_iteration,
                "tau": config.tau,
                "nms_iou_thr": config.nms_iou_thr,
                "batch_size": config.batch_size,
                "batch_ratio": list(config.batch_ratio),
                "num_slots": config.num_slots,
                "seed": config.seed,
                "semi_oracle": config.semi_oracle,
                "gen_cat_threshold": config.gen_cat_threshold,
                "eval_iou_thresholds": list(config.eval_iou_thresholds),
                "use_feature_exchange": config.use_feature_exchange,
                "embed_dim": config.embed_dim,
                "detector": {
                    "kind": config.detector.kind,
                    "command": config.detector.command,
                    "params": config.detector.params,
                },
                "generator": {
                    "kind": config.generator.kind,
                    "command": config.generator.command,
                    "params": config.generator.params,
                },
                "request_deadline": config.request_deadline,
            }
        )
    )


def _write_run_outputs(run_dir: Path, runner: CoEvoRunner, state) -> None:
    (run_dir / "metrics.json").write_text(
        json.dumps([r.as_dict() for r in state.metric_log], indent=2)
    )
    (run_dir / "metrics.csv").write_text(early_metrics_curves(state))
    (run_dir / "trace_digest.txt").write_text(runner.trace.digest() + "\n")
    names = {
        i + 1: name for i, name in enumerate(runner.dataset.categories.names[1:])
    }
    summary = ["# Co-evolution run summary", ""]
    summary.append(iteration_summary_table(state.metric_log))
    if state.metric_log:
        summary.append("## Final detection results\n")
        summary.append(det_eval_table(state.metric_log[-1].det, names))
        summary.append("## Final report-generation results\n")
        summary.append(rep_eval_table(state.metric_log[-1].rep))
    (run_dir / "summary.md").write_text("\n".join(summary))


def cmd_filter(args: argparse.Namespace) -> int:
    teacher = _load_predictions(Path(args.teacher))
    student = _load_predictions(Path(args.student))
    gen_cats = {
        r["sample_id"]: frozenset(r["categories"])
        for r in _read_jsonl(Path(args.gen_cats))
    }
    sample_ids = sorted(set(teacher) | set(student) | set(gen_cats))
    out_path = Path(args.out)
    with out_path.open("w") as fh:
        for sid in sample_ids:
            pseudo = assemble_pseudo_labels(
                teacher.get(sid, []),
                student.get(sid, []),
                GeneratorCategorySet(sid, gen_cats.get(sid, frozenset())),
                args.tau,
                args.iou_thr,
            )
            fh.write(
                json.dumps(
                    {
                        "sample_id": sid,
                        "labels": [detection_to_wire(d) for d in pseudo.labels],
                        "include_in_unsup_loss": pseudo.include_in_unsup_loss,
                        "provenance": {
                            "raw_teacher": pseudo.provenance.raw_teacher,
                            "raw_student": pseudo.provenance.raw_student,
                            "after_threshold": pseudo.provenance.after_threshold,
                            "after_sa_nms": pseudo.provenance.after_sa_nms,
                            "after_gip": pseudo.provenance.after_gip,
                        },
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    print(f"wrote pseudo labels for {len(sample_ids)} samples to {out_path}")
    return EXIT_OK


def _parse_thresholds(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"bad thresholds: {text}") from exc
    if not values:
        raise ConfigError("thresholds must be non-empty")
    return values


def cmd_eval_det(args: argparse.Namespace) -> int:
    preds = _load_predictions(Path(args.pred))
    gts = {
        sid: anns for sid, (_, _, anns) in load_annotation_file(Path(args.gt)).items()
    }
    missing = sorted(set(preds) - set(gts))
    if missing:
        print(
            f"sample ids missing from ground truth: {missing[:10]}", file=sys.stderr
        )
        return EXIT_CONFIG
    # The ground-truth file may cover a superset (e.g. the whole dataset
    # while predictions are a split); evaluate over the predicted samples.
    gts = {sid: gts[sid] for sid in preds}
    thresholds = _parse_thresholds(args.thresholds)
    result = mean_ap(preds, gts, thresholds)
    names = None
    if args.categories:
        table = CategoryTable(
            tuple(json.loads(Path(args.categories).read_text())["names"])
        )
        names = {i + 1: n for i, n in enumerate(table.names[1:])}
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "det_eval.json").write_text(
        json.dumps(
            {
                "map": {str(t): result.mean[t] for t in thresholds},
                "ap_per_category": {
                    str(t): {str(c): v for c, v in result.per_category[t].items()}
                    for t in thresholds
                },
            },
            indent=2,
            sort_keys=True,
        )
    )
    (out_dir / "det_eval.md").write_text(det_eval_table(result, names))
    print((out_dir / "det_eval.md").read_text())
    return EXIT_OK


def cmd_eval_rep(args: argparse.Namespace) -> int:
    preds = {r["sample_id"]: r for r in _read_jsonl(Path(args.pred))}
    refs = {r["sample_id"]: r for r in _read_jsonl(Path(args.ref))}
    missing = sorted(set(preds) ^ set(refs))
    if missing:
        print(f"sample ids not in both files: {missing[:10]}", file=sys.stderr)
        return EXIT_CONFIG
    ordered = sorted(preds)
    candidates = [list(preds[sid]["report"]) for sid in ordered]
    references = [list(refs[sid]["report"]) for sid in ordered]
    bleus = [corpus_bleu(candidates, references, n) for n in (1, 2, 3, 4)]
    rouges = {
        sid: rouge_l(list(preds[sid]["report"]), list(refs[sid]["report"]))
        for sid in ordered
    }
    auc = None
    if args.gt:
        gt = load_annotation_file(Path(args.gt))
        rows, labels = [], []
        for sid in ordered:
            probs = preds[sid].get("category_probs")
            if probs is None or sid not in gt:
                continue
            _, _, anns = gt[sid]
            true_cats = {c for c, _ in anns}
            rows.append(list(probs))
            labels.append([1 if c in true_cats else 0 for c in range(1, len(probs) + 1)])
        if rows:
            try:
                auc = multilabel_auc(rows, labels)
            except ValueError:
                auc = None
    wilcoxon_p = None
    if args.baseline:
        baseline = {r["sample_id"]: r for r in _read_jsonl(Path(args.baseline))}
        diffs = [
            rouges[sid]
            - rouge_l(list(baseline[sid]["report"]), list(refs[sid]["report"]))
            for sid in ordered
            if sid in baseline
        ]
        try:
            wilcoxon_p = wilcoxon_signed_rank(diffs)
        except ValueError:
            wilcoxon_p = None
    result = RepEvalResult(
        bleu1=bleus[0],
        bleu2=bleus[1],
        bleu3=bleus[2],
        bleu4=bleus[3],
        rougeL=sum(rouges.values()) / len(rouges) if rouges else 0.0,
        auc=auc,
        wilcoxon_p=wilcoxon_p,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "rep_eval.json").write_text(
        json.dumps(result.as_dict(), indent=2, sort_keys=True)
    )
    (out_dir / "rep_eval.md").write_text(rep_eval_table(result))
    print((out_dir / "rep_eval.md").read_text())
    return EXIT_OK


def cmd_sweep_tau(args: argparse.Namespace) -> int:
    config, data_dir = _load_run_config(Path(args.config))
    dataset = load_dataset_dir(data_dir)
    taus = [float(v) for v in args.tau_grid.split(",") if v]
    if not taus:
        raise ConfigError("tau grid must be non-empty")
    results = []
    for tau in taus:
        run_cfg = CoEvoConfig.from_dict({**_config_dict(config), "tau": tau})
        runner = CoEvoRunner(run_cfg, dataset)
        try:
            state = runner.run()
        finally:
            runner.close()
        results.append(state.metric_log[-1].det)
        log.info("tau=%.2f mAP=%s", tau, state.metric_log[-1].det.mean)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "tau_sweep.md").write_text(sweep_table(taus, results))
    (out_dir / "tau_sweep.csv").write_text(sweep_csv(taus, results))
    print((out_dir / "tau_sweep.md").read_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coedg",
        description="Co-evolutionary abnormality-detection / report-generation engine",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synth", help="write a synthetic dataset directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-samples", type=int, default=500)
    p.add_argument("--n-categories", type=int, default=8)
    p.add_argument("--labeled-fraction", type=float, default=0.1)
    p.add_argument("--image-size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synth)

    p = sub.add_parser("coevolve", help="run the co-evolution loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--semi-oracle", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_coevolve)

    p = sub.add_parser("filter", help="apply the pseudo-label pipeline offline")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--gen-cats", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--iou-thr", type=float, default=0.5)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval-det", help="detection evaluation tables")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds", default="0.25,0.5,0.75")
    p.add_argument("--categories", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval_det)

    p = sub.add_parser("eval-rep", help="report-generation evaluation tables")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--baseline", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval_rep)

    p = sub.add_parser("sweep-tau", help="threshold sweep over short runs")
    p.add_argument("--config", required=True)
    p.add_argument("--tau-grid", default="0.7,0.8,0.9,0.95")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep_tau)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdapterError as exc:
        print(f"adapter failure: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
