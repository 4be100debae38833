"""Synthetic dataset generation: a hidden world plus starter label files.

The generator produces the private ground truth a simulation runs
against, and the two flavors of bootstrap labels a run can start from:
a box document (verified starter labels) or a dot CSV (legacy point
annotations covering most, but not all, objects).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .config import WorldConfig
from .detector import HiddenObject, HiddenWorld
from .geometry import BBox
from .labelstore import ImageRecord
from .seeds import TAG_WORLD, rng_for

# Sub-stream indices under TAG_WORLD, so the world itself, the seed-label
# draw, and the dot draw are independent of each other.
_STREAM_OBJECTS = 0
_STREAM_SEED = 1
_STREAM_DOTS = 2


def generate_world(cfg: WorldConfig, seed: int) -> HiddenWorld:
    """Draw a hidden world: images on a fixed frame, objects per image.

    Object count per image is Poisson; sides are uniform within the
    configured range; centers keep the whole box inside the frame.
    """
    rng = rng_for(seed, TAG_WORLD, _STREAM_OBJECTS)
    images: list[ImageRecord] = []
    objects: list[HiddenObject] = []
    counter = 0
    for i in range(cfg.images):
        image_id = f"img{i:05d}"
        images.append(ImageRecord(image_id, cfg.width, cfg.height,
                                  f"{image_id}.jpg", "pool"))
        for _ in range(int(rng.poisson(cfg.objects_per_image))):
            w = float(rng.uniform(cfg.min_side, cfg.max_side))
            h = float(rng.uniform(cfg.min_side, cfg.max_side))
            cx = float(rng.uniform(w / 2, cfg.width - w / 2))
            cy = float(rng.uniform(h / 2, cfg.height - h / 2))
            label = cfg.classes[int(rng.integers(len(cfg.classes)))]
            objects.append(HiddenObject(f"o{counter:06d}", image_id,
                                        BBox(cx - w / 2, cy - h / 2,
                                             cx + w / 2, cy + h / 2), label))
            counter += 1
    return HiddenWorld(images, objects, list(cfg.classes))


def _box_document(world: HiddenWorld, chosen: list[HiddenObject]) -> dict:
    """Box-JSON document labeling exactly the chosen hidden objects."""
    cat_ids = {name: i + 1 for i, name in enumerate(world.classes)}
    return {
        "images": [
            {"id": im.image_id, "width": im.width, "height": im.height,
             "file_name": im.uri, "split": im.split}
            for im in sorted(world.images.values(), key=lambda im: im.image_id)
        ],
        "categories": [{"id": i + 1, "name": n} for i, n in enumerate(world.classes)],
        "annotations": [
            {"id": f"s{k:06d}", "image_id": obj.image_id,
             "category_id": cat_ids[obj.class_label],
             "bbox": [obj.box.x_min, obj.box.y_min, obj.box.width, obj.box.height]}
            for k, obj in enumerate(chosen)
        ],
    }


def _sample_objects(world: HiddenWorld, count: int,
                    rng: np.random.Generator,
                    exclude: set[str] = frozenset()) -> list[HiddenObject]:
    eligible = [o for o in world.objects if o.obj_id not in exclude]
    count = min(count, len(eligible))
    picks = sorted(rng.choice(len(eligible), size=count, replace=False).tolist())
    return [eligible[i] for i in picks]


def seed_document(world: HiddenWorld, fraction: float, seed: int) -> dict:
    """Starter labels: an exact box for a random fraction of all objects."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = rng_for(seed, TAG_WORLD, _STREAM_SEED)
    chosen = _sample_objects(world, round(fraction * len(world.objects)), rng)
    if not chosen:
        raise ValueError("seed fraction selects no objects")
    return _box_document(world, chosen)


def legacy_documents(world: HiddenWorld, dot_coverage: float,
                     seed_fraction: float, seed: int) -> tuple[dict, list[dict], list[str]]:
    """Bootstrap files for a legacy-dots run.

    Splits the objects three ways: a small verified-box subset (review
    checks need trusted boxes from day one), dot rows for the rest of the
    covered objects, and an uncovered remainder that carries no label at
    all. Returns (box document, dot rows, uncovered object ids).
    """
    if not 0.0 < dot_coverage <= 1.0:
        raise ValueError(f"dot_coverage must be in (0, 1], got {dot_coverage}")
    rng = rng_for(seed, TAG_WORLD, _STREAM_DOTS)
    total = len(world.objects)
    covered = _sample_objects(world, round(dot_coverage * total), rng)
    uncovered = sorted({o.obj_id for o in world.objects} - {o.obj_id for o in covered})

    covered_ids = {o.obj_id for o in covered}
    verified = _sample_objects(world, max(1, round(seed_fraction * len(covered))), rng,
                               exclude=set(uncovered))
    verified_ids = {o.obj_id for o in verified}
    assert verified_ids <= covered_ids

    rows = [
        {"image_id": o.image_id, "x": round(o.box.center[0], 3),
         "y": round(o.box.center[1], 3), "class_label": o.class_label}
        for o in covered if o.obj_id not in verified_ids
    ]
    return _box_document(world, verified), rows, uncovered


def save_dot_csv(rows: list[dict], path: Path | str) -> None:
    """Write dot rows in the import format (image_id,x,y,class_label)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["image_id", "x", "y", "class_label"])
        writer.writeheader()
        writer.writerows(rows)
