"""Simulated worker population: archetypes, answer behavior, gate rates."""

import numpy as np
import pytest

from labelloop.crowdgate import GoldTask, Hit, SubTask, make_gold_proposal, make_viewport
from labelloop.detector import HiddenObject, HiddenWorld
from labelloop.geometry import BBox, iou
from labelloop.labelstore import BACKGROUND, ImageRecord
from labelloop.workersim import (
    DEFAULT_MIX,
    Archetype,
    SimulationIntegrityError,
    WorkerProfile,
    answer_hit,
    answer_subtask,
    make_profile,
    spawn_workers,
)

CLASSES = ["A", "B", "C"]


def one_object_world(box=BBox(100, 100, 160, 150), label="A"):
    images = [ImageRecord("im0", 400.0, 400.0, "u", "pool")]
    return HiddenWorld(images, [HiddenObject("o1", "im0", box, label)], CLASSES)


def subtask_over(box, current_class="A", ann_id="p1"):
    return SubTask(ann_id, "im0", make_viewport(box, 400, 400), box, current_class)


class TestProfiles:
    def test_archetype_parameters(self):
        d = make_profile("w1", Archetype.DILIGENT)
        c = make_profile("w2", Archetype.CARELESS)
        s = make_profile("w3", Archetype.SPAMMER)
        assert d.class_accuracy > c.class_accuracy > s.class_accuracy
        assert d.box_noise < c.box_noise
        assert s.class_accuracy == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            WorkerProfile("w", Archetype.DILIGENT, class_accuracy=1.5)
        with pytest.raises(ValueError):
            WorkerProfile("w", Archetype.DILIGENT, box_noise=-0.1)

    def test_spawn_mix_proportions(self):
        rng = np.random.default_rng(0)
        roster = spawn_workers(5000, rng)
        counts = {k: 0 for k in Archetype}
        for w in roster:
            counts[w.archetype] += 1
        for kind, expected in zip((Archetype.DILIGENT, Archetype.CARELESS,
                                   Archetype.SPAMMER), DEFAULT_MIX):
            assert counts[kind] / 5000 == pytest.approx(expected, abs=0.03)

    def test_spawn_ids_and_validation(self):
        rng = np.random.default_rng(0)
        roster = spawn_workers(3, rng, id_start=7)
        assert [w.worker_id for w in roster] == ["w00007", "w00008", "w00009"]
        with pytest.raises(ValueError):
            spawn_workers(0, rng)
        with pytest.raises(ValueError):
            spawn_workers(2, rng, mix=(0.0, 0.0, 0.0))

    def test_deterministic_roster(self):
        a = spawn_workers(20, np.random.default_rng(5))
        b = spawn_workers(20, np.random.default_rng(5))
        assert a == b


class TestAnswerSubtask:
    def test_diligent_redraws_near_truth(self):
        world = one_object_world()
        truth = world.objects[0].box
        profile = make_profile("w", Archetype.DILIGENT)
        rng = np.random.default_rng(0)
        # Proposal is offset from truth; a diligent answer tracks the truth.
        proposal = BBox(110, 108, 170, 158)
        ious = []
        for _ in range(300):
            ans = answer_subtask(profile, subtask_over(proposal), world, rng)
            if ans.box is not None:
                ious.append(iou(ans.box, truth))
        assert np.mean(ious) > 0.85

    def test_diligent_flags_false_positive_region(self):
        world = one_object_world()
        profile = make_profile("w", Archetype.DILIGENT)
        rng = np.random.default_rng(1)
        # Proposal far from the only true object.
        proposal = BBox(300, 300, 340, 330)
        flagged = sum(
            answer_subtask(profile, subtask_over(proposal), world, rng).class_label
            == BACKGROUND
            for _ in range(500))
        assert flagged / 500 == pytest.approx(0.9, abs=0.05)

    def test_class_accuracy_rate(self):
        world = one_object_world(label="B")
        profile = make_profile("w", Archetype.DILIGENT)
        rng = np.random.default_rng(2)
        proposal = world.objects[0].box
        right = sum(
            answer_subtask(profile, subtask_over(proposal), world, rng).class_label
            == "B"
            for _ in range(500))
        assert right / 500 == pytest.approx(0.95, abs=0.03)

    def test_spammer_ignores_the_image(self):
        world = one_object_world()
        profile = make_profile("w", Archetype.SPAMMER)
        rng = np.random.default_rng(3)
        st = subtask_over(world.objects[0].box)
        answers = [answer_subtask(profile, st, world, rng) for _ in range(300)]
        labels = {a.class_label for a in answers}
        assert labels == set(CLASSES) | {BACKGROUND}
        for a in answers:
            if a.box is not None:
                assert st.crop_viewport.contains_box(a.box)

    def test_unknown_image_rejected(self):
        world = one_object_world()
        bad = SubTask("p1", "ghost", BBox(0, 0, 10, 10), BBox(0, 0, 10, 10), "A")
        with pytest.raises(SimulationIntegrityError):
            answer_subtask(make_profile("w", Archetype.DILIGENT), bad, world,
                           np.random.default_rng(0))

    def test_deterministic_given_rng(self):
        world = one_object_world()
        st = subtask_over(world.objects[0].box)
        profile = make_profile("w", Archetype.CARELESS)
        a = answer_subtask(profile, st, world, np.random.default_rng(9))
        b = answer_subtask(profile, st, world, np.random.default_rng(9))
        assert a == b


def gold_hit(world, rng):
    """A HIT of ten gold-style subtasks over the world's only object."""
    obj = world.objects[0]
    gold = GoldTask("g1", obj.image_id, obj.box, obj.class_label)
    proposal = make_gold_proposal(obj.box, rng, 400, 400)
    st = SubTask("g1", obj.image_id, make_viewport(proposal, 400, 400),
                 proposal, obj.class_label, is_gold=True)
    work = tuple(SubTask(f"p{j}", obj.image_id, st.crop_viewport, proposal,
                         obj.class_label) for j in range(9))
    return Hit("h1", work + (st,), gold)


class TestAnswerHit:
    def test_answers_follow_subtask_order(self):
        world = one_object_world()
        rng = np.random.default_rng(0)
        hit = gold_hit(world, rng)
        answers = answer_hit(make_profile("w", Archetype.DILIGENT), hit, world, rng)
        assert [a.ann_id for a in answers] == [st.ann_id for st in hit.subtasks]

    def test_gate_pass_rates_by_archetype(self):
        # The calibration behind the quality gate: a diligent worker's
        # redrawn gold box clears IoU 0.8 almost always, a spammer's
        # uniform box almost never.
        world = one_object_world()
        rng = np.random.default_rng(4)
        diligent = make_profile("d", Archetype.DILIGENT)
        spammer = make_profile("s", Archetype.SPAMMER)
        n = 1000
        d_pass = s_pass = 0
        for _ in range(n):
            hit = gold_hit(world, rng)
            truth = hit.gold.truth_box
            d_ans = answer_hit(diligent, hit, world, rng)[-1]
            s_ans = answer_hit(spammer, hit, world, rng)[-1]
            if d_ans.box is not None and iou(d_ans.box, truth) > 0.8:
                d_pass += 1
            if s_ans.box is not None and iou(s_ans.box, truth) > 0.8:
                s_pass += 1
        assert d_pass / n > 0.90
        assert s_pass / n < 0.01
