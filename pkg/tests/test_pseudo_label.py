import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from coedg.geometry import BBox, Detection, Source, sa_nms
from coedg.metrics import category_precision
from coedg.pseudo_label import (
    GeneratorCategorySet,
    assemble_pseudo_labels,
    gip_filter,
    loss_inclusion,
    normal_case_detection,
    threshold_filter,
)


def det(cat, score, x0=0.0, source=Source.TEACHER):
    return Detection(cat, BBox(x0, 0, x0 + 20, 20), score, source)


def cats(*values, sid="s"):
    return GeneratorCategorySet(sid, frozenset(values))


class TestThresholdFilter:
    def test_paper_operating_point(self):
        dets = [det(1, 0.95), det(1, 0.91), det(1, 0.89)]
        kept = threshold_filter(dets, 0.9)
        assert kept == dets[:2]

    def test_tau_one_empties(self):
        assert threshold_filter([det(1, 1.0), det(2, 0.99)], 1.0) == []

    def test_identity_when_all_above(self):
        dets = [det(1, 0.95), det(2, 0.99)]
        assert threshold_filter(dets, 0.5) == dets

    def test_strictly_above(self):
        assert threshold_filter([det(1, 0.9)], 0.9) == []

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            threshold_filter([], 0.0)


class TestGipFilter:
    def test_all_categories_is_identity(self):
        dets = [det(1, 0.95), det(3, 0.92), det(5, 0.91, x0=40)]
        assert gip_filter(dets, cats(1, 2, 3, 4, 5)) == dets

    def test_set_membership(self):
        dets = [det(1, 0.95), det(3, 0.92, x0=30), det(5, 0.91, x0=60)]
        kept = gip_filter(dets, cats(1, 5))
        assert [d.category for d in kept] == [1, 5]

    def test_empty_generator_set(self):
        dets = [det(1, 0.95)]
        assert gip_filter(dets, cats()) == []
        assert loss_inclusion(dets, [], cats()) is False

    def test_never_adds_or_rescores(self):
        rng = random.Random(0)
        for _ in range(200):
            dets = [
                det(rng.randint(1, 6), round(rng.random(), 3), x0=rng.uniform(0, 50))
                for _ in range(rng.randint(0, 6))
            ]
            allowed = frozenset(rng.sample(range(1, 7), rng.randint(0, 6)))
            kept = gip_filter(dets, GeneratorCategorySet("s", allowed))
            assert all(d in dets for d in kept)
            order = [dets.index(d) for d in kept]
            assert order == sorted(order)

    def test_background_category_rejected_in_set(self):
        with pytest.raises(ValueError):
            cats(0, 1)


class TestLossInclusion:
    def test_both_detectors_empty(self):
        assert loss_inclusion([], [], cats(1)) is False

    def test_generator_empty_overrides_detections(self):
        assert loss_inclusion([det(1, 0.95)], [], cats()) is False

    def test_included_otherwise(self):
        assert loss_inclusion([det(1, 0.95)], [], cats(1)) is True


class TestAssemble:
    def test_empty_detectors_excluded(self):
        pseudo = assemble_pseudo_labels([], [], cats(1), 0.9, 0.5)
        assert pseudo.labels == ()
        assert pseudo.include_in_unsup_loss is False

    def test_oracle_categories_remove_wrong_detection(self):
        teacher = [det(1, 0.95), det(4, 0.93, x0=40)]
        pseudo = assemble_pseudo_labels(teacher, [], cats(1), 0.9, 0.5)
        assert [d.category for d in pseudo.labels] == [1]

    def test_matches_stage_by_stage_composition(self):
        rng = random.Random(1)
        for _ in range(200):
            teacher = [
                det(rng.randint(1, 4), round(rng.random(), 3), x0=rng.uniform(0, 60))
                for _ in range(rng.randint(0, 5))
            ]
            student = [
                det(
                    rng.randint(1, 4),
                    round(rng.random(), 3),
                    x0=rng.uniform(0, 60),
                    source=Source.STUDENT,
                )
                for _ in range(rng.randint(0, 5))
            ]
            gen = GeneratorCategorySet(
                "s", frozenset(rng.sample(range(1, 5), rng.randint(0, 4)))
            )
            tau, thr = 0.6, 0.5
            pseudo = assemble_pseudo_labels(teacher, student, gen, tau, thr)
            expected = gip_filter(
                sa_nms(
                    threshold_filter(teacher, tau),
                    threshold_filter(student, tau),
                    thr,
                ),
                gen,
            )
            assert list(pseudo.labels) == expected
            assert pseudo.include_in_unsup_loss == loss_inclusion(teacher, student, gen)

    def test_provenance_counts(self):
        teacher = [det(1, 0.95), det(2, 0.5, x0=40)]
        student = [det(1, 0.97, x0=1, source=Source.STUDENT)]
        pseudo = assemble_pseudo_labels(teacher, student, cats(1, 2), 0.9, 0.5)
        prov = pseudo.provenance
        assert prov.raw_teacher == 2
        assert prov.raw_student == 1
        assert prov.after_threshold == 2
        assert prov.after_sa_nms == 1  # same-category overlap collapses
        assert prov.after_gip == 1

    def test_deterministic(self):
        teacher = [det(1, 0.95), det(2, 0.93, x0=40)]
        student = [det(2, 0.96, x0=41, source=Source.STUDENT)]
        a = assemble_pseudo_labels(teacher, student, cats(1, 2), 0.9, 0.5)
        b = assemble_pseudo_labels(teacher, student, cats(1, 2), 0.9, 0.5)
        assert a == b


class TestSemiOracleProperty:
    def test_precision_never_drops_1000_seeds(self):
        for seed in range(1000):
            rng = random.Random(seed)
            true_cats = set(rng.sample(range(1, 9), rng.randint(0, 4)))
            pseudo = [
                det(rng.randint(1, 8), round(rng.uniform(0.5, 1.0), 3), x0=rng.uniform(0, 80))
                for _ in range(rng.randint(0, 6))
            ]
            oracle = GeneratorCategorySet("s", frozenset(true_cats))
            before = category_precision([d.category for d in pseudo], true_cats)
            kept = gip_filter(pseudo, oracle)
            after = category_precision([d.category for d in kept], true_cats)
            assert after >= before
            has_false_positive = any(d.category not in true_cats for d in pseudo)
            if has_false_positive:
                assert after > before

    @given(
        st.lists(st.tuples(st.integers(1, 8), st.floats(0.5, 1.0)), max_size=8),
        st.sets(st.integers(1, 8), max_size=5),
    )
    def test_precision_never_drops_property(self, raw, true_cats):
        pseudo = [det(c, round(s, 3), x0=i * 25.0) for i, (c, s) in enumerate(raw)]
        oracle = GeneratorCategorySet("s", frozenset(true_cats))
        before = category_precision([d.category for d in pseudo], true_cats)
        after = category_precision(
            [d.category for d in gip_filter(pseudo, oracle)], true_cats
        )
        assert after >= before


class TestNormalCase:
    def test_nonempty_identity(self):
        dets = [det(1, 0.95)]
        assert normal_case_detection(dets, 512, 512) == dets

    def test_whole_image_square(self):
        out = normal_case_detection([], 512, 512)
        assert len(out) == 1
        d = out[0]
        assert d.category == 0
        assert (d.box.x0, d.box.y0, d.box.x1, d.box.y1) == (0.0, 0.0, 512.0, 512.0)
        assert d.score == 1.0

    def test_whole_image_rectangular(self):
        out = normal_case_detection([], 1024, 768)
        d = out[0]
        assert (d.box.x1, d.box.y1) == (1024.0, 768.0)

    def test_invalid_dims(self):
        with pytest.raises(ValueError):
            normal_case_detection([], 0, 100)
