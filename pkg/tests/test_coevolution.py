import json

import pytest

from coedg.coevolution import (
    AdapterSpec,
    CoEvoConfig,
    CoEvoRunner,
    ConfigError,
    early_metrics_curves,
    inference,
)
from coedg.dataset import SynthConfig, compose_report, synth_dataset

SMALL = dict(iterations=2, epochs_per_iteration=4, batch_size=6, seed=11)


def small_runner(dataset, run_dir=None, **overrides):
    cfg = CoEvoConfig(**{**SMALL, **overrides})
    return CoEvoRunner(cfg, dataset, run_dir=run_dir)


class TestConfig:
    def test_defaults_match_operating_point(self):
        cfg = CoEvoConfig()
        assert cfg.iterations == 3
        assert cfg.epochs_per_iteration == 20
        assert cfg.tau == 0.9
        assert cfg.nms_iou_thr == 0.5
        assert cfg.batch_ratio == (2, 1)
        assert cfg.num_slots == 5
        assert cfg.eval_iou_thresholds == (0.25, 0.5, 0.75)

    def test_validation(self):
        with pytest.raises(ConfigError):
            CoEvoConfig(iterations=0)
        with pytest.raises(ConfigError):
            CoEvoConfig(tau=0.0)
        with pytest.raises(ConfigError):
            CoEvoConfig(batch_size=10, batch_ratio=(2, 1))
        with pytest.raises(ConfigError):
            AdapterSpec(kind="external")

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            CoEvoConfig.from_dict({"bogus": 1})

    def test_from_dict_nested_specs(self):
        cfg = CoEvoConfig.from_dict(
            {"detector": {"kind": "simulated", "params": {"sigma": 5.0}}}
        )
        assert cfg.detector.params["sigma"] == 5.0


class TestInitialTeacher:
    def test_oracle_detector_at_max_after_first_epoch(self, small_synth):
        runner = small_runner(
            small_synth,
            epochs_per_iteration=1,
            detector=AdapterSpec(params={"initial_skill": 1.0}),
        )
        runner.train_initial_teacher()
        assert runner.state.teacher.skill == 1.0

    def test_no_labeled_samples_is_config_error(self):
        ds = synth_dataset(
            SynthConfig(n_samples=40, n_categories=3, labeled_fraction=0.0), seed=0
        )
        with pytest.raises(ConfigError, match="labeled"):
            CoEvoRunner(CoEvoConfig(**SMALL), ds)

    def test_seeded_trajectory_reproducible(self, small_synth):
        skills = []
        for _ in range(2):
            runner = small_runner(small_synth)
            runner.train_initial_teacher()
            skills.append(runner.state.teacher.skill)
        assert skills[0] == skills[1]


class TestRunIteration:
    def test_metric_log_grows_per_iteration(self, small_synth):
        runner = small_runner(small_synth)
        runner.run()
        assert len(runner.state.metric_log) == 2
        assert [r.iteration for r in runner.state.metric_log] == [0, 1]

    def test_teacher_frozen_within_iterations(self, small_synth):
        runner = small_runner(small_synth)
        runner.train_initial_teacher()
        runner.train_initial_generator()
        baseline = runner.trace.op_counts[("teacher", "train_epoch")]
        runner.run_iteration()
        # All detector training traffic during an iteration goes to the
        # student label; the teacher-labeled handle receives none.
        assert runner.trace.op_counts[("teacher", "train_epoch")] == baseline

    def test_promotion_preserves_state_bitwise(self, small_synth):
        runner = small_runner(small_synth)
        runner.train_initial_teacher()
        runner.train_initial_generator()
        student_model = runner.state.student.backing_model()
        runner.run_iteration()
        digest_before = student_model.state_digest()
        # After promotion the same model object sits behind the teacher slot.
        assert runner.state.teacher.backing_model() is student_model
        assert runner.state.teacher.backing_model().state_digest() == digest_before

    def test_semi_oracle_gip_removes_every_false_category(self, small_synth):
        runner = small_runner(small_synth, semi_oracle=True)
        runner.train_initial_teacher()
        runner.train_initial_generator()
        runner.run_iteration()
        quality = runner.state.metric_log[-1].stage_precision
        assert quality["after_gip"] == 1.0
        assert quality["after_gip"] >= quality["after_sa_nms"]

    def test_pseudo_quality_stage_ordering_semi_oracle(self, small_synth):
        # With oracle categories the filter removes exactly the categorical
        # false positives, so the final stage can never be less precise.
        runner = small_runner(small_synth, semi_oracle=True)
        runner.run()
        for record in runner.state.metric_log:
            stage = record.stage_precision
            assert stage["after_gip"] == 1.0
            assert stage["after_gip"] >= stage["after_sa_nms"]


class TestDeterminism:
    def test_identical_runs_identical_traces_and_logs(self, small_synth):
        digests, logs = [], []
        for _ in range(2):
            runner = small_runner(small_synth)
            state = runner.run()
            digests.append(runner.trace.digest())
            logs.append([r.as_dict() for r in state.metric_log])
        assert digests[0] == digests[1]
        assert logs[0] == logs[1]

    def test_seed_changes_trace(self, small_synth):
        a = small_runner(small_synth)
        a.run()
        b = small_runner(small_synth, seed=12)
        b.run()
        assert a.trace.digest() != b.trace.digest()


class TestInference:
    def _oracle_handles(self, dataset):
        runner = small_runner(
            dataset,
            detector=AdapterSpec(params={"initial_skill": 1.0}),
            generator=AdapterSpec(params={"recall": 1.0, "precision": 1.0}),
        )
        return runner

    def test_normal_sample_gets_normal_report(self, small_synth):
        runner = self._oracle_handles(small_synth)
        sample = next(
            s for s in small_synth.samples if not small_synth.ground_truth[s.sample_id]
        )
        dets, result = inference(
            runner.state.student, runner.state.generator, sample
        )
        assert len(dets) == 1 and dets[0].category == 0
        assert list(result.report) == ["no", "acute", "findings", "."]

    def test_oracle_adapters_reproduce_ground_truth(self, small_synth):
        runner = self._oracle_handles(small_synth)
        sample = next(
            s for s in small_synth.samples if small_synth.ground_truth[s.sample_id]
        )
        dets, result = inference(
            runner.state.student, runner.state.generator, sample
        )
        expected = small_synth.ground_truth[sample.sample_id]
        assert [(d.category, d.box) for d in dets] == [(c, b) for c, b in expected]
        cats = sorted({c for c, _ in expected})
        names = [small_synth.categories.name_of(c) for c in cats]
        assert list(result.report) == compose_report(names)

    def test_deterministic_per_seed(self, small_synth):
        runner = self._oracle_handles(small_synth)
        sample = small_synth.samples[0]
        a = inference(runner.state.student, runner.state.generator, sample)
        b = inference(runner.state.student, runner.state.generator, sample)
        assert a == b


class TestCurvesAndCheckpoints:
    def test_curves_shape(self, small_synth):
        runner = small_runner(small_synth)
        state = runner.run()
        csv = early_metrics_curves(state)
        lines = csv.strip().splitlines()
        assert lines[0] == "iteration,map@0.25,map@0.5,map@0.75,bleu4"
        assert len(lines) == 3

    def test_curves_require_iterations(self, small_synth):
        runner = small_runner(small_synth)
        with pytest.raises(ValueError):
            early_metrics_curves(runner.state)

    def test_curves_match_recomputed_metrics(self, small_synth, tmp_path):
        runner = small_runner(small_synth, run_dir=tmp_path)
        state = runner.run()
        from coedg.adapters.protocol import detection_from_wire
        from coedg.geometry import Source
        from coedg.metrics import mean_ap

        row = early_metrics_curves(state).strip().splitlines()[1].split(",")
        preds = {}
        for line in (tmp_path / "predictions" / "iter0_detections.jsonl").read_text().splitlines():
            record = json.loads(line)
            preds[record["sample_id"]] = [
                detection_from_wire(d, Source.STUDENT) for d in record["detections"]
            ]
        gts = runner._eval_ground_truth()
        recomputed = mean_ap({sid: preds[sid] for sid in gts}, gts, (0.25, 0.5, 0.75))
        assert float(row[2]) == pytest.approx(recomputed.mean[0.5], abs=5e-7)

    def test_checkpoint_resume_continues(self, small_synth, tmp_path):
        full = small_runner(small_synth, run_dir=tmp_path / "full", iterations=2)
        full_state = full.run()

        part = small_runner(small_synth, run_dir=tmp_path / "part", iterations=1)
        part.run()
        resumed = small_runner(small_synth, run_dir=tmp_path / "part", iterations=2)
        resumed.run(resume=True)

        assert resumed.state.iteration == 2
        assert (
            resumed.state.teacher.backing_model().state_digest()
            == full.state.teacher.backing_model().state_digest()
        )
        assert resumed.state.metric_log[-1].as_dict() == (
            full_state.metric_log[-1].as_dict()
        )

    def test_checkpoint_written_per_iteration(self, small_synth, tmp_path):
        runner = small_runner(small_synth, run_dir=tmp_path)
        runner.run()
        blob = json.loads((tmp_path / "checkpoint.json").read_text())
        assert blob["iteration"] == 2
        assert set(blob["adapters"]) == {"teacher", "student", "generator"}


class TestAdapterFailureHandling:
    def test_failure_aborts_with_state_preserved(self, small_synth):
        runner = small_runner(small_synth)
        runner.train_initial_teacher()
        runner.train_initial_generator()
        # Sabotage the generator: drop its ground truth so generate faults.
        runner.state.generator.backing_model().ground_truth = {}
        from coedg.adapters.protocol import AdapterError

        with pytest.raises(AdapterError):
            runner.run_iteration()
        assert runner.state.iteration == 0
