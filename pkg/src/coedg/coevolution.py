"""The co-evolution control loop.

One run: train the initial teacher on labeled data only, train an initial
generator from the teacher's detections, then iterate: distill a reborn
student with threshold + teacher/student-NMS + generator-filtered pseudo
labels, retrain a reborn generator from the frozen student's detections,
promote the student to teacher, and evaluate both on the validation split.
All adapter traffic goes through AdapterHandle so a run is reproducible and
its protocol trace digest comparable across transports.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .adapters.protocol import (
    AdapterError,
    AdapterHandle,
    AdapterUnsupported,
    GenerationResult,
    TraceRecorder,
    detection_to_wire,
    dip_to_wire,
    in_process_handle,
    spawn_external,
)
from .adapters.simulated import SimulatedModel, derive_seed
from .dataset import Annotation, Sample, SyntheticDataset, batch_sampler, split
from .dip import (
    DipInput,
    build_dip_input,
    classification_targets,
    ground_truth_detections,
)
from .geometry import Detection, Source, sa_nms
from .metrics import (
    DetEvalResult,
    RepEvalResult,
    corpus_bleu,
    mean_ap,
    multilabel_auc,
    rouge_l,
    wilcoxon_signed_rank,
)
from .pseudo_label import (
    GeneratorCategorySet,
    PseudoLabelSet,
    assemble_pseudo_labels,
    gip_filter,
    normal_case_detection,
    threshold_filter,
)

log = logging.getLogger("coedg.coevolution")


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class AdapterSpec:
    """How to obtain one adapter: built-in simulated model or external command."""

    kind: str = "simulated"
    command: Optional[str] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("simulated", "external"):
            raise ConfigError(f"unknown adapter kind: {self.kind}")
        if self.kind == "external" and not self.command:
            raise ConfigError("external adapter needs a command")


@dataclass(frozen=True)
class CoEvoConfig:
    iterations: int = 3
    epochs_per_iteration: int = 20
    tau: float = 0.9
    nms_iou_thr: float = 0.5
    batch_size: int = 12
    batch_ratio: tuple[int, int] = (2, 1)
    num_slots: int = 5
    seed: int = 0
    semi_oracle: bool = False
    gen_cat_threshold: float = 0.5
    eval_iou_thresholds: tuple[float, ...] = (0.25, 0.5, 0.75)
    use_feature_exchange: bool = True
    embed_dim: int = 16
    detector: AdapterSpec = field(default_factory=AdapterSpec)
    generator: AdapterSpec = field(default_factory=AdapterSpec)
    request_deadline: float = 30.0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.epochs_per_iteration < 1:
            raise ConfigError("epochs_per_iteration must be >= 1")
        if not (0.0 < self.tau <= 1.0):
            raise ConfigError("tau must be in (0, 1]")
        if not (0.0 <= self.nms_iou_thr <= 1.0):
            raise ConfigError("nms_iou_thr must be in [0, 1]")
        if self.num_slots < 1:
            raise ConfigError("num_slots must be >= 1")
        total = self.batch_ratio[0] + self.batch_ratio[1]
        if total == 0 or self.batch_size % total != 0:
            raise ConfigError("batch_size must divide by the ratio total")

    @classmethod
    def from_dict(cls, raw: dict) -> "CoEvoConfig":
        known = dict(raw)
        for key in ("detector", "generator"):
            if key in known and isinstance(known[key], dict):
                known[key] = AdapterSpec(**known[key])
        for key in ("batch_ratio", "eval_iou_thresholds"):
            if key in known:
                known[key] = tuple(known[key])
        try:
            return cls(**known)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class IterationRecord:
    iteration: int
    det: DetEvalResult
    rep: RepEvalResult
    pseudo_precision: float
    pseudo_recall: float
    stage_precision: dict[str, float]
    student_skill: Optional[float]
    generator_skill: Optional[float]

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "map": {str(t): v for t, v in self.det.mean.items()},
            "ap_per_category": {
                str(t): {str(c): v for c, v in aps.items()}
                for t, aps in self.det.per_category.items()
            },
            "rep": self.rep.as_dict(),
            "pseudo_precision": self.pseudo_precision,
            "pseudo_recall": self.pseudo_recall,
            "stage_precision": self.stage_precision,
            "student_skill": self.student_skill,
            "generator_skill": self.generator_skill,
        }


@dataclass
class CoEvoState:
    iteration: int
    teacher: AdapterHandle
    student: AdapterHandle
    generator: AdapterHandle
    metric_log: list[IterationRecord] = field(default_factory=list)


def inference(
    student: AdapterHandle,
    generator: AdapterHandle,
    sample: Sample,
    tau: float = 0.9,
    num_slots: int = 5,
    reference: Optional[Sequence[str]] = None,
) -> tuple[list[Detection], GenerationResult]:
    """Detect, threshold, apply the normal-case rule, then generate a report."""
    raw = student.detect(sample.sample_id, Source.STUDENT)
    dets = normal_case_detection(
        threshold_filter(raw, tau), sample.width, sample.height
    )
    dip = build_dip_input(sample, dets, "student-filtered", num_slots)
    return dets, generator.generate(dip, reference=reference)


class _QualityTrace:
    """Category precision/recall of pseudo labels, accumulated per stage.

    Counts are pooled over all (sample, epoch) pairs of the iteration:
    precision is the fraction of emitted labels whose category is truly
    present in their image, recall the fraction of truly present categories
    covered. Pooling keeps samples with empty label sets from diluting the
    ratios.
    """

    STAGES = ("after_threshold", "after_sa_nms", "after_gip")

    def __init__(self) -> None:
        self.label_counts: dict[str, list[int]] = {s: [0, 0] for s in self.STAGES}
        self.recall_counts = [0, 0]

    def add(self, stage_cats: dict[str, list[int]], true_cats: set[int]) -> None:
        for stage in self.STAGES:
            cats = stage_cats[stage]
            counts = self.label_counts[stage]
            counts[0] += sum(1 for c in cats if c in true_cats)
            counts[1] += len(cats)
        covered = {c for c in stage_cats["after_gip"] if c in true_cats}
        self.recall_counts[0] += len(covered)
        self.recall_counts[1] += len(true_cats)

    def mean_precision(self, stage: str) -> float:
        correct, total = self.label_counts[stage]
        return correct / total if total else 1.0

    def mean_recall(self) -> float:
        covered, total = self.recall_counts
        return covered / total if total else 1.0


class CoEvoRunner:
    """Owns the adapters, the split, and per-run caches for one run."""

    def __init__(
        self,
        config: CoEvoConfig,
        dataset: SyntheticDataset,
        trace: Optional[TraceRecorder] = None,
        run_dir: Optional[Path] = None,
    ) -> None:
        self.config = config
        self.dataset = dataset
        self.trace = trace if trace is not None else TraceRecorder()
        self.run_dir = Path(run_dir) if run_dir is not None else None

        self.train, self.val, self.test = split(dataset.samples, config.seed)
        self.samples = {s.sample_id: s for s in dataset.samples}
        self.labeled_train = [s.sample_id for s in self.train if s.labeled]
        self.weak_train = [s.sample_id for s in self.train if not s.labeled]
        if not self.labeled_train:
            raise ConfigError("no labeled samples in the training split")

        self._gt_wire = self._ground_truth_wire()
        self._last_rouges: dict[str, float] = {}
        self.state = self._make_state()
        self._embed_supported = config.use_feature_exchange

    # -- setup ----------------------------------------------------------------

    def _ground_truth_wire(self) -> dict:
        out = {}
        for sid, anns in self.dataset.ground_truth.items():
            sample = self.samples[sid]
            out[sid] = {
                "width": sample.width,
                "height": sample.height,
                "boxes": [
                    {"category": c, "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1}
                    for c, b in anns
                ],
            }
        return out

    def _make_handle(self, spec: AdapterSpec, role: str, label: str) -> AdapterHandle:
        if spec.kind == "simulated":
            return in_process_handle(role, SimulatedModel(), trace=self.trace, label=label)
        assert spec.command is not None
        return spawn_external(
            spec.command,
            role,
            trace=self.trace,
            label=label,
            deadline=self.config.request_deadline,
        )

    def _init_handle(self, handle: AdapterHandle, spec: AdapterSpec, seed: int) -> None:
        handle.init(
            {
                "seed": seed,
                "categories": list(self.dataset.categories.names),
                "embed_dim": self.config.embed_dim,
                "train_pool_size": len(self.train),
                "params": spec.params,
                "ground_truth": self._gt_wire,
            }
        )

    def _make_state(self) -> CoEvoState:
        cfg = self.config
        teacher = self._make_handle(cfg.detector, "detector", "teacher")
        student = self._make_handle(cfg.detector, "detector", "student")
        generator = self._make_handle(cfg.generator, "generator", "generator")
        self._init_handle(teacher, cfg.detector, derive_seed(cfg.seed, "teacher"))
        self._init_handle(student, cfg.detector, derive_seed(cfg.seed, "student"))
        self._init_handle(generator, cfg.generator, derive_seed(cfg.seed, "generator"))
        return CoEvoState(iteration=0, teacher=teacher, student=student, generator=generator)

    def close(self) -> None:
        for handle in (self.state.teacher, self.state.student, self.state.generator):
            try:
                handle.shutdown()
            except AdapterError:
                pass

    # -- shared pieces ----------------------------------------------------------

    def _true_categories(self, sample_id: str) -> set[int]:
        anns = self.dataset.ground_truth.get(sample_id)
        if anns is None:
            anns = self.samples[sample_id].annotations or ()
        return {c for c, _ in anns}

    def _dip_from_detections(
        self, sample: Sample, raw_dets: Sequence[Detection]
    ) -> tuple[DipInput, list[Detection]]:
        """Threshold + normal-case a raw detection set and build its DIP input."""
        dets = normal_case_detection(
            threshold_filter(raw_dets, self.config.tau), sample.width, sample.height
        )
        return (
            build_dip_input(sample, dets, "student-filtered", self.config.num_slots),
            dets,
        )

    def _generator_categories(
        self, sample: Sample, raw_student_dets: Sequence[Detection]
    ) -> GeneratorCategorySet:
        if self.config.semi_oracle:
            cats = frozenset(self._true_categories(sample.sample_id))
        else:
            dip, _ = self._dip_from_detections(sample, raw_student_dets)
            result = self.state.generator.generate(dip)
            cats = frozenset(
                c + 1
                for c, p in enumerate(result.category_probs)
                if p > self.config.gen_cat_threshold
            )
        return GeneratorCategorySet(sample_id=sample.sample_id, categories=cats)

    def _embedding(self, sample_id: str, cache: dict) -> Optional[list[float]]:
        if not self._embed_supported:
            return None
        if sample_id not in cache:
            try:
                cache[sample_id] = self.state.generator.embed(sample_id)
            except AdapterUnsupported:
                log.info("generator lacks embed support; disabling feature exchange")
                self._embed_supported = False
                return None
        return cache[sample_id]

    # -- training phases ----------------------------------------------------------

    def train_initial_teacher(self) -> None:
        """Supervised pretraining of the teacher on labeled data only."""
        cfg = self.config
        for epoch in range(cfg.epochs_per_iteration):
            entries = []
            batches = batch_sampler(
                self.labeled_train,
                [],
                cfg.batch_size,
                (1, 0),
                derive_seed(cfg.seed, "teacher-epoch", epoch),
            )
            for batch in batches:
                for sid in batch.labeled_ids:
                    sample = self.samples[sid]
                    entries.append(
                        {
                            "sample_id": sid,
                            "detections": [
                                detection_to_wire(d)
                                for d in ground_truth_detections(sample)
                            ],
                        }
                    )
            self.state.teacher.train_epoch({"labels": entries})
        log.info("initial teacher trained: skill=%s", self.state.teacher.skill)

    def _train_generator_phase(self, detector: AdapterHandle, tag: str) -> None:
        """Train the generator from DIP inputs built off a frozen detector.

        The detector is frozen for the whole phase, so its detections (and
        therefore the DIP inputs and classification targets) are computed
        once and replayed every epoch.
        """
        cfg = self.config
        num_cats = self.dataset.categories.num_categories
        entries = []
        for sample in self.train:
            if sample.labeled:
                dets = ground_truth_detections(sample)
                dip = build_dip_input(sample, dets, "ground-truth", cfg.num_slots)
            else:
                raw = detector.detect(sample.sample_id, Source.STUDENT)
                dip, dets = self._dip_from_detections(sample, raw)
            target = classification_targets(sample.sample_id, dets, num_cats)
            entries.append(
                {
                    "sample_id": sample.sample_id,
                    "dip": dip_to_wire(dip),
                    "target": list(target.multi_hot),
                    "reference": list(sample.report),
                }
            )
        for _epoch in range(cfg.epochs_per_iteration):
            self.state.generator.train_epoch({"samples": entries})
        log.info("%s generator trained: skill=%s", tag, self.state.generator.skill)

    def train_initial_generator(self) -> None:
        """The first generator learns from the initial teacher's detections."""
        self._train_generator_phase(self.state.teacher, "initial")

    def _assemble_for_sample(
        self,
        sample: Sample,
        teacher_dets: Sequence[Detection],
        student_dets: Sequence[Detection],
        gen_cats: GeneratorCategorySet,
        quality: _QualityTrace,
    ) -> PseudoLabelSet:
        cfg = self.config
        pseudo = assemble_pseudo_labels(
            teacher_dets, student_dets, gen_cats, cfg.tau, cfg.nms_iou_thr
        )
        if sample.sample_id in self.dataset.ground_truth:
            thresholded = threshold_filter(teacher_dets, cfg.tau) + threshold_filter(
                student_dets, cfg.tau
            )
            merged = sa_nms(
                threshold_filter(teacher_dets, cfg.tau),
                threshold_filter(student_dets, cfg.tau),
                cfg.nms_iou_thr,
            )
            final = gip_filter(merged, gen_cats)
            quality.add(
                {
                    "after_threshold": [d.category for d in thresholded],
                    "after_sa_nms": [d.category for d in merged],
                    "after_gip": [d.category for d in final],
                },
                self._true_categories(sample.sample_id),
            )
        return pseudo

    def _student_epoch(
        self, epoch: int, teacher_cache: dict, quality: _QualityTrace
    ) -> None:
        cfg = self.config
        entries: list[dict] = []
        student_cache: dict[str, list[Detection]] = {}
        gen_cat_cache: dict[str, GeneratorCategorySet] = {}
        embed_cache: dict[str, list[float]] = {}

        def attach_embedding(entry: dict) -> dict:
            emb = self._embedding(entry["sample_id"], embed_cache)
            if emb is not None:
                entry["embedding"] = emb
            return entry

        batches = batch_sampler(
            self.labeled_train,
            self.weak_train,
            cfg.batch_size,
            cfg.batch_ratio,
            derive_seed(cfg.seed, "iter", self.state.iteration, "epoch", epoch),
        )
        for batch in batches:
            for sid in batch.labeled_ids:
                sample = self.samples[sid]
                entries.append(
                    attach_embedding(
                        {
                            "sample_id": sid,
                            "detections": [
                                detection_to_wire(d)
                                for d in ground_truth_detections(sample)
                            ],
                        }
                    )
                )
            for sid in batch.weak_ids:
                sample = self.samples[sid]
                if sid not in teacher_cache:
                    teacher_cache[sid] = self.state.teacher.detect(sid, Source.TEACHER)
                if sid not in student_cache:
                    student_cache[sid] = self.state.student.detect(sid, Source.STUDENT)
                if sid not in gen_cat_cache:
                    gen_cat_cache[sid] = self._generator_categories(
                        sample, student_cache[sid]
                    )
                pseudo = self._assemble_for_sample(
                    sample,
                    teacher_cache[sid],
                    student_cache[sid],
                    gen_cat_cache[sid],
                    quality,
                )
                if not pseudo.include_in_unsup_loss or not pseudo.labels:
                    continue
                entries.append(
                    attach_embedding(
                        {
                            "sample_id": sid,
                            "detections": [
                                detection_to_wire(d) for d in pseudo.labels
                            ],
                        }
                    )
                )
        self.state.student.train_epoch({"labels": entries})

    def run_iteration(self) -> IterationRecord:
        """One co-evolution round; appends and returns its metric record."""
        cfg = self.config
        k = self.state.iteration
        # Rebirth seeds are constant within a run: iterations then share
        # noise realizations (common random numbers), so metric trajectories
        # reflect skill changes rather than resampled jitter.
        self.state.student.reinit(derive_seed(cfg.seed, "student"))
        teacher_cache: dict[str, list[Detection]] = {}
        quality = _QualityTrace()
        for epoch in range(cfg.epochs_per_iteration):
            self._student_epoch(epoch, teacher_cache, quality)
        # Student frozen from here on; a reborn generator learns from it.
        self.state.generator.reinit(derive_seed(cfg.seed, "generator"))
        self._train_generator_phase(self.state.student, f"iteration-{k}")
        # Promote: the student handle becomes the teacher; the retired
        # teacher handle will be reborn as the next student. Labels follow
        # the role so the protocol trace stays attributable.
        self.state.teacher, self.state.student = self.state.student, self.state.teacher
        self.state.teacher.label, self.state.student.label = "teacher", "student"
        record = self._evaluate(k, quality)
        self.state.metric_log.append(record)
        self.state.iteration += 1
        if self.run_dir is not None:
            self.save_checkpoint()
        return record

    # -- evaluation ------------------------------------------------------------

    def _eval_ground_truth(self) -> dict[str, Sequence[Annotation]]:
        gts: dict[str, Sequence[Annotation]] = {}
        for sample in self.val:
            anns = self.dataset.ground_truth.get(sample.sample_id)
            if anns is None and sample.labeled:
                anns = sample.annotations
            if anns is not None:
                gts[sample.sample_id] = anns
        return gts

    def _evaluate(self, iteration: int, quality: _QualityTrace) -> IterationRecord:
        cfg = self.config
        detector = self.state.teacher  # the just-promoted student
        preds: dict[str, list[Detection]] = {}
        reports: dict[str, tuple] = {}
        probs: dict[str, tuple] = {}
        for sample in self.val:
            raw = detector.detect(sample.sample_id, Source.STUDENT)
            preds[sample.sample_id] = raw
            dip, _ = self._dip_from_detections(sample, raw)
            result = self.state.generator.generate(dip, reference=sample.report)
            reports[sample.sample_id] = result.report
            probs[sample.sample_id] = result.category_probs

        gts = self._eval_ground_truth()
        det_eval = mean_ap(
            {sid: preds[sid] for sid in gts}, gts, cfg.eval_iou_thresholds
        )

        ordered = [s.sample_id for s in self.val]
        candidates = [list(reports[sid]) for sid in ordered]
        references = [list(self.samples[sid].report) for sid in ordered]
        bleus = [corpus_bleu(candidates, references, n) for n in (1, 2, 3, 4)]
        rouges = {
            sid: rouge_l(list(reports[sid]), list(self.samples[sid].report))
            for sid in ordered
        }
        rep_eval = RepEvalResult(
            bleu1=bleus[0],
            bleu2=bleus[1],
            bleu3=bleus[2],
            bleu4=bleus[3],
            rougeL=sum(rouges.values()) / len(rouges) if rouges else 0.0,
            auc=self._eval_auc(ordered, probs),
            wilcoxon_p=self._wilcoxon_vs_previous(rouges),
        )
        self._last_rouges = rouges
        if self.run_dir is not None:
            self._dump_predictions(iteration, preds, reports, probs)
        return IterationRecord(
            iteration=iteration,
            det=det_eval,
            rep=rep_eval,
            pseudo_precision=quality.mean_precision("after_gip"),
            pseudo_recall=quality.mean_recall(),
            stage_precision={
                stage: quality.mean_precision(stage) for stage in quality.STAGES
            },
            student_skill=detector.skill,
            generator_skill=self.state.generator.skill,
        )

    def _eval_auc(self, ordered: list[str], probs: dict[str, tuple]) -> Optional[float]:
        num_cats = self.dataset.categories.num_categories
        rows = []
        labels = []
        for sid in ordered:
            if sid not in self.dataset.ground_truth and not self.samples[sid].labeled:
                continue
            true_cats = self._true_categories(sid)
            rows.append(list(probs[sid]))
            labels.append([1 if c in true_cats else 0 for c in range(1, num_cats + 1)])
        try:
            return multilabel_auc(rows, labels)
        except ValueError:
            return None

    def _wilcoxon_vs_previous(self, rouges: dict[str, float]) -> Optional[float]:
        if not self._last_rouges:
            return None
        diffs = [
            rouges[sid] - self._last_rouges[sid]
            for sid in rouges
            if sid in self._last_rouges
        ]
        try:
            return wilcoxon_signed_rank(diffs)
        except ValueError:
            return None

    def _dump_predictions(
        self,
        iteration: int,
        preds: dict[str, list[Detection]],
        reports: dict[str, tuple],
        probs: dict[str, tuple],
    ) -> None:
        assert self.run_dir is not None
        pred_dir = self.run_dir / "predictions"
        pred_dir.mkdir(parents=True, exist_ok=True)
        with (pred_dir / f"iter{iteration}_detections.jsonl").open("w") as fh:
            for sid in sorted(preds):
                fh.write(
                    json.dumps(
                        {
                            "sample_id": sid,
                            "detections": [detection_to_wire(d) for d in preds[sid]],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        with (pred_dir / f"iter{iteration}_reports.jsonl").open("w") as fh:
            for sid in sorted(reports):
                fh.write(
                    json.dumps(
                        {
                            "sample_id": sid,
                            "report": list(reports[sid]),
                            "category_probs": list(probs[sid]),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    # -- the full loop -----------------------------------------------------------

    def run(self, resume: bool = False) -> CoEvoState:
        """Full pipeline: initial models plus config.iterations rounds."""
        resumed = resume and self.resume_from_checkpoint()
        if not resumed:
            self.train_initial_teacher()
            self.train_initial_generator()
        while self.state.iteration < self.config.iterations:
            record = self.run_iteration()
            log.info(
                "iteration %d: mAP=%s bleu4=%.4f pseudo_precision=%.4f",
                record.iteration,
                {t: round(v, 4) for t, v in record.det.mean.items()},
                record.rep.bleu4,
                record.pseudo_precision,
            )
        return self.state

    # -- persistence ---------------------------------------------------------------

    def save_checkpoint(self) -> None:
        assert self.run_dir is not None
        self.run_dir.mkdir(parents=True, exist_ok=True)
        blob = {
            "iteration": self.state.iteration,
            "metric_log": [r.as_dict() for r in self.state.metric_log],
            "last_rouges": self._last_rouges,
            "adapters": {},
        }
        for name, handle in (
            ("teacher", self.state.teacher),
            ("student", self.state.student),
            ("generator", self.state.generator),
        ):
            model = handle.backing_model()
            if isinstance(model, SimulatedModel):
                blob["adapters"][name] = model.state_dict()
        (self.run_dir / "checkpoint.json").write_text(json.dumps(blob, indent=2))

    def resume_from_checkpoint(self) -> bool:
        """Restore iteration count and simulated-adapter state, if present.

        The metric log of completed iterations is not reconstructed into
        DetEvalResult objects; resuming continues the remaining iterations
        and the on-disk checkpoint keeps the full history.
        """
        if self.run_dir is None:
            return False
        path = self.run_dir / "checkpoint.json"
        if not path.exists():
            return False
        blob = json.loads(path.read_text())
        for name, handle in (
            ("teacher", self.state.teacher),
            ("student", self.state.student),
            ("generator", self.state.generator),
        ):
            model = handle.backing_model()
            state = blob["adapters"].get(name)
            if state is None or not isinstance(model, SimulatedModel):
                raise ConfigError("checkpoint resume requires simulated adapters")
            model.load_state(state)
        self.state.iteration = blob["iteration"]
        self._last_rouges = blob.get("last_rouges", {})
        return True


def early_metrics_curves(state: CoEvoState) -> str:
    """CSV of mAP per IoU threshold plus BLEU-4, one row per iteration."""
    if not state.metric_log:
        raise ValueError("no completed iterations")
    thresholds = sorted(state.metric_log[0].det.mean)
    header = ["iteration"] + [f"map@{t:g}" for t in thresholds] + ["bleu4"]
    lines = [",".join(header)]
    for record in state.metric_log:
        row = [str(record.iteration)]
        row.extend(f"{record.det.mean[t]:.6f}" for t in thresholds)
        row.append(f"{record.rep.bleu4:.6f}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
