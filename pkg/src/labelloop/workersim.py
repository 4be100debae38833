"""Simulated worker population answering HITs against the hidden world.

Three archetypes: diligent workers redraw boxes tightly and identify
classes and false positives well; careless workers do everything sloppier;
spammers place uniform random boxes and pick uniform random classes.
Workers see only the HIT contents and the hidden world (as a stand-in for
the actual image), never annotation states or gold markers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .crowdgate import Hit, SubTask, WorkerAnswer
from .detector import HiddenObject, HiddenWorld
from .geometry import BBox, iou
from .labelstore import BACKGROUND

# Calibrated so a diligent gold answer clears IoU 0.8 with probability ~0.95.
DILIGENT_BOX_NOISE = 0.042

DEFAULT_MIX = (0.7, 0.2, 0.1)


class SimulationIntegrityError(RuntimeError):
    """A HIT references imagery the hidden world does not know."""


class Archetype(str, Enum):
    DILIGENT = "diligent"
    CARELESS = "careless"
    SPAMMER = "spammer"


@dataclass(frozen=True)
class WorkerProfile:
    worker_id: str
    archetype: Archetype
    box_noise: float = DILIGENT_BOX_NOISE
    class_accuracy: float = 0.95
    background_detection_accuracy: float = 0.9

    def __post_init__(self):
        for name in ("class_accuracy", "background_detection_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.box_noise < 0:
            raise ValueError(f"box_noise must be non-negative, got {self.box_noise}")


def make_profile(worker_id: str, archetype: Archetype) -> WorkerProfile:
    if archetype is Archetype.DILIGENT:
        return WorkerProfile(worker_id, archetype, DILIGENT_BOX_NOISE, 0.95, 0.9)
    if archetype is Archetype.CARELESS:
        return WorkerProfile(worker_id, archetype, 0.12, 0.75, 0.6)
    return WorkerProfile(worker_id, archetype, 0.0, 0.0, 0.0)


def spawn_workers(count: int, rng: np.random.Generator,
                  mix: tuple[float, float, float] = DEFAULT_MIX,
                  id_start: int = 1) -> list[WorkerProfile]:
    """Draw a worker roster from the archetype mix (diligent, careless, spammer)."""
    if count < 1:
        raise ValueError("count must be positive")
    weights = np.asarray(mix, dtype=np.float64)
    if weights.min() < 0 or weights.sum() <= 0:
        raise ValueError(f"invalid mix {mix}")
    weights = weights / weights.sum()
    kinds = [Archetype.DILIGENT, Archetype.CARELESS, Archetype.SPAMMER]
    draws = rng.choice(3, size=count, p=weights)
    return [make_profile(f"w{id_start + i:05d}", kinds[int(k)])
            for i, k in enumerate(draws)]


def _noisy_box(box: BBox, noise: float, rng: np.random.Generator,
               image_w: float, image_h: float) -> BBox:
    if noise == 0.0:
        return box
    g = rng.standard_normal(4)
    x1 = box.x_min + noise * box.width * g[0]
    y1 = box.y_min + noise * box.height * g[1]
    x2 = box.x_max + noise * box.width * g[2]
    y2 = box.y_max + noise * box.height * g[3]
    if x1 >= x2 or y1 >= y2:
        return box
    clipped = BBox(x1, y1, x2, y2).clipped(image_w, image_h)
    return clipped if clipped is not None else box


def _uniform_box(viewport: BBox, rng: np.random.Generator) -> BBox:
    xs = np.sort(rng.uniform(viewport.x_min, viewport.x_max, size=2))
    ys = np.sort(rng.uniform(viewport.y_min, viewport.y_max, size=2))
    if xs[1] - xs[0] < 1e-6:
        xs[1] = xs[0] + 1e-6
    if ys[1] - ys[0] < 1e-6:
        ys[1] = ys[0] + 1e-6
    return BBox(float(xs[0]), float(ys[0]), float(xs[1]), float(ys[1]))


def _wrong_class(true_class: str, classes: list[str], rng: np.random.Generator) -> str:
    others = [c for c in classes if c != true_class]
    if not others:
        return true_class
    return others[int(rng.integers(len(others)))]


def _best_object(subtask: SubTask, world: HiddenWorld) -> HiddenObject | None:
    best: HiddenObject | None = None
    best_iou = 0.0
    for obj in world.objects_for_image(subtask.image_id):
        v = iou(subtask.proposal_box, obj.box)
        if v > best_iou:
            best_iou = v
            best = obj
    return best


def answer_subtask(profile: WorkerProfile, subtask: SubTask, world: HiddenWorld,
                   rng: np.random.Generator) -> WorkerAnswer:
    """One worker's answer to one subtask; deterministic given rng state.

    The proposal's best-overlapping hidden object plays the role of what
    the worker actually sees in the crop. No overlap means the proposal
    is a false-positive region.
    """
    if subtask.image_id not in world.images:
        raise SimulationIntegrityError(
            f"subtask {subtask.ann_id!r} references unknown image {subtask.image_id!r}")
    image = world.images[subtask.image_id]

    if profile.archetype is Archetype.SPAMMER:
        options = world.classes + [BACKGROUND]
        label = options[int(rng.integers(len(options)))]
        if label == BACKGROUND:
            return WorkerAnswer(subtask.ann_id, None, BACKGROUND)
        return WorkerAnswer(subtask.ann_id, _uniform_box(subtask.crop_viewport, rng), label)

    target = _best_object(subtask, world)
    if target is None:
        # Nothing real here; a good worker says so.
        if rng.random() < profile.background_detection_accuracy:
            return WorkerAnswer(subtask.ann_id, None, BACKGROUND)
        box = _noisy_box(subtask.proposal_box, profile.box_noise, rng,
                         image.width, image.height)
        label = subtask.current_class
        if label == BACKGROUND or rng.random() >= profile.class_accuracy:
            label = _wrong_class(BACKGROUND, world.classes, rng)
        return WorkerAnswer(subtask.ann_id, box, label)

    box = _noisy_box(target.box, profile.box_noise, rng, image.width, image.height)
    if rng.random() < profile.class_accuracy:
        label = target.class_label
    else:
        label = _wrong_class(target.class_label, world.classes, rng)
    return WorkerAnswer(subtask.ann_id, box, label)


def answer_hit(profile: WorkerProfile, hit: Hit, world: HiddenWorld,
               rng: np.random.Generator) -> list[WorkerAnswer]:
    """Answers for all ten subtasks, in subtask order."""
    return [answer_subtask(profile, st, world, rng) for st in hit.subtasks]
