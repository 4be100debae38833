"""Synthetic world and bootstrap document generation."""

import pytest

from labelloop.config import WorldConfig
from labelloop.detector import HiddenWorld
from labelloop.worldgen import generate_world, legacy_documents, seed_document


def small_cfg(**overrides):
    defaults = dict(images=15, objects_per_image=5.0)
    defaults.update(overrides)
    return WorldConfig(**defaults)


class TestGenerateWorld:
    def test_deterministic_for_seed(self):
        a = generate_world(small_cfg(), 9)
        b = generate_world(small_cfg(), 9)
        assert a.to_document() == b.to_document()

    def test_seed_changes_world(self):
        a = generate_world(small_cfg(), 9)
        b = generate_world(small_cfg(), 10)
        assert a.to_document() != b.to_document()

    def test_boxes_inside_frame_and_side_range(self):
        cfg = small_cfg()
        world = generate_world(cfg, 3)
        assert len(world.images) == cfg.images
        assert world.objects, "expected a nonempty world"
        for obj in world.objects:
            b = obj.box
            assert 0 <= b.x_min < b.x_max <= cfg.width
            assert 0 <= b.y_min < b.y_max <= cfg.height
            assert cfg.min_side <= b.width <= cfg.max_side
            assert cfg.min_side <= b.height <= cfg.max_side
            assert obj.class_label in cfg.classes

    def test_document_roundtrip(self):
        world = generate_world(small_cfg(), 3)
        again = HiddenWorld.from_document(world.to_document())
        assert again.to_document() == world.to_document()

    def test_save_load(self, tmp_path):
        world = generate_world(small_cfg(), 3)
        world.save(tmp_path / "w.json")
        assert HiddenWorld.load(tmp_path / "w.json").to_document() == world.to_document()

    def test_document_carries_hidden_marker(self):
        assert generate_world(small_cfg(), 3).to_document()["hidden"] is True


class TestSeedDocument:
    def test_fraction_of_objects(self):
        world = generate_world(small_cfg(), 4)
        doc = seed_document(world, 0.15, 4)
        expected = round(0.15 * len(world.objects))
        assert len(doc["annotations"]) == expected

    def test_deterministic(self):
        world = generate_world(small_cfg(), 4)
        assert seed_document(world, 0.2, 4) == seed_document(world, 0.2, 4)

    def test_boxes_match_hidden_objects(self):
        world = generate_world(small_cfg(), 4)
        doc = seed_document(world, 0.2, 4)
        truth = {(o.image_id, round(o.box.x_min, 6), round(o.box.y_min, 6))
                 for o in world.objects}
        for ann in doc["annotations"]:
            key = (ann["image_id"], round(ann["bbox"][0], 6), round(ann["bbox"][1], 6))
            assert key in truth


class TestLegacyDocuments:
    def test_partition_is_disjoint_and_covers(self):
        world = generate_world(small_cfg(), 8)
        boxes, dots, uncovered = legacy_documents(world, 0.9, 0.15, 8)
        all_ids = {o.obj_id for o in world.objects}
        uncovered_set = set(uncovered)
        # Verified boxes come only from dotted coverage, never the holdout.
        assert len(boxes["annotations"]) + len(dots) + len(uncovered) == len(all_ids)
        assert uncovered_set <= all_ids
        assert len(uncovered) == len(all_ids) - round(0.9 * len(all_ids))

    def test_dots_inside_their_objects(self):
        world = generate_world(small_cfg(), 8)
        _, dots, _ = legacy_documents(world, 0.9, 0.15, 8)
        by_image = {}
        for o in world.objects:
            by_image.setdefault(o.image_id, []).append(o.box)
        for row in dots:
            assert any(b.contains_point(row["x"], row["y"])
                       for b in by_image[row["image_id"]])

    def test_full_coverage_leaves_no_holdout(self):
        world = generate_world(small_cfg(), 8)
        _, _, uncovered = legacy_documents(world, 1.0, 0.15, 8)
        assert uncovered == []

    def test_rejects_empty_world_fraction(self):
        world = generate_world(small_cfg(), 8)
        with pytest.raises(ValueError):
            seed_document(world, 0.0, 8)
