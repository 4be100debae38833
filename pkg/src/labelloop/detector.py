"""Detector contract plus a deterministic simulated detector.

The simulator owns the run's hidden ground truth (the "world"): true
objects per image that no other pipeline module may read. Detection
quality is driven by how much of the world is already labeled: per-class
recall rises with the labeled fraction, and the false-positive rate decays
with the number of confirmed background labels, so closed-loop runs
improve the way a retrained model would, without any deep learning.

It also synthesizes anchor features for training, standing in for image
content: features derive from the hidden world exactly as conv features
derive from pixels, which keeps the trainer itself free of ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .events import canonical_json
from .geometry import BBox, iou, iou_matrix
from .labelstore import (
    Annotation,
    AnnotationState,
    ImageRecord,
    LabelStore,
    SchemaError,
)
from .seeds import TAG_DETECT, rng_for
from .trainer import LabeledBox, MatchConfig, TrainingInstance, match_and_sample
from .trainer.augment import apply_boxes, apply_labeled, sample_transform
from .trainer.sampling import generate_anchors

FEATURE_DIM = 3
FEATURE_REF_SIDE = 48.0

ANCHOR_STRIDE = 32.0
ANCHOR_SIZES = (32.0, 64.0, 96.0)


class DetectorError(RuntimeError):
    """Raised on unknown images or malformed world files."""


@dataclass(frozen=True)
class HiddenObject:
    obj_id: str
    image_id: str
    box: BBox
    class_label: str


class HiddenWorld:
    """Private ground truth for simulation: true objects per image."""

    def __init__(self, images: list[ImageRecord], objects: list[HiddenObject],
                 classes: list[str]):
        self.images: dict[str, ImageRecord] = {im.image_id: im for im in images}
        self.classes = list(classes)
        self.objects = sorted(objects, key=lambda o: o.obj_id)
        self._by_image: dict[str, list[HiddenObject]] = {}
        for obj in self.objects:
            if obj.image_id not in self.images:
                raise DetectorError(f"object {obj.obj_id!r} references unknown image "
                                    f"{obj.image_id!r}")
            self._by_image.setdefault(obj.image_id, []).append(obj)
        # Stable image ordering doubles as the per-image seed index.
        self.image_order = sorted(self.images)

    def objects_for_image(self, image_id: str) -> list[HiddenObject]:
        if image_id not in self.images:
            raise DetectorError(f"unknown image {image_id!r}")
        return self._by_image.get(image_id, [])

    def image_index(self, image_id: str) -> int:
        try:
            return self.image_order.index(image_id)
        except ValueError:
            raise DetectorError(f"unknown image {image_id!r}") from None

    def class_totals(self) -> dict[str, int]:
        totals = {name: 0 for name in self.classes}
        for obj in self.objects:
            totals[obj.class_label] = totals.get(obj.class_label, 0) + 1
        return totals

    def to_document(self) -> dict:
        return {
            "hidden": True,
            "images": [
                {"id": im.image_id, "width": im.width, "height": im.height,
                 "file_name": im.uri, "split": im.split}
                for im in sorted(self.images.values(), key=lambda im: im.image_id)
            ],
            "categories": [{"id": i + 1, "name": n} for i, n in enumerate(self.classes)],
            "annotations": [
                {"id": o.obj_id, "image_id": o.image_id,
                 "category_id": self.classes.index(o.class_label) + 1,
                 "bbox": [round(v, 6) for v in o.box.as_xywh()]}
                for o in self.objects
            ],
        }

    def save(self, path: Path | str) -> None:
        Path(path).write_text(canonical_json(self.to_document()) + "\n", encoding="utf-8")

    @classmethod
    def from_document(cls, doc: dict) -> HiddenWorld:
        if not doc.get("hidden"):
            raise DetectorError("world file must carry the hidden marker")
        classes = [c["name"] for c in sorted(doc["categories"], key=lambda c: c["id"])]
        cat_by_id = {c["id"]: c["name"] for c in doc["categories"]}
        images = [ImageRecord(str(im["id"]), im["width"], im["height"],
                              im.get("file_name", ""), im.get("split", "pool"))
                  for im in doc["images"]]
        objects = []
        for raw in doc["annotations"]:
            if raw["category_id"] not in cat_by_id:
                raise SchemaError(f"world object {raw.get('id')!r} has unknown category")
            objects.append(HiddenObject(str(raw["id"]), str(raw["image_id"]),
                                        BBox.from_xywh(raw["bbox"]),
                                        cat_by_id[raw["category_id"]]))
        return cls(images, objects, classes)

    @classmethod
    def load(cls, path: Path | str) -> HiddenWorld:
        with open(path, encoding="utf-8") as fh:
            return cls.from_document(json.load(fh))


@dataclass(frozen=True)
class LabeledSummary:
    """What the simulator knows about labeling progress.

    class_fractions: per class, settled labels divided by hidden totals.
    background_count: confirmed background labels available to training.
    """

    class_fractions: dict[str, float]
    background_count: int


def training_summary(world: HiddenWorld, store: LabelStore,
                     include_background: bool = True) -> LabeledSummary:
    """Labeling progress the detection formulas run on.

    With include_background False the confirmed-background count is
    withheld (reported as zero), which is the ablation's "off" arm.
    """
    totals = world.class_totals()
    settled = store.class_counts({AnnotationState.SEED, AnnotationState.APPROVED})
    fractions = {}
    for name in world.classes:
        total = totals.get(name, 0)
        fractions[name] = min(1.0, settled.get(name, 0) / total) if total else 0.0
    b = len(store.annotations_in({AnnotationState.BACKGROUND_CONFIRMED}))
    return LabeledSummary(fractions, b if include_background else 0)


@dataclass(frozen=True)
class Detection:
    """One predicted object. source_obj is simulator provenance (the hidden
    object that produced it, None for a false positive); metrics must match
    by IoU, never by this field."""

    image_id: str
    box: BBox
    class_label: str
    score: float
    source_obj: str | None = None


@dataclass(frozen=True)
class SimDetectorConfig:
    p_min: float = 0.35
    p_max: float = 0.95
    box_jitter_sigma: float = 0.05
    fp_rate0: float = 1.5
    fp_decay_beta: float = 0.02
    tp_score_alpha: float = 5.0
    tp_score_beta: float = 2.0
    fp_score_alpha: float = 2.0
    fp_score_beta: float = 5.0
    fp_size_range: tuple[float, float] = (24.0, 96.0)
    publish_threshold: float = 0.5
    dedup_iou: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_min <= self.p_max <= 1.0:
            raise ValueError(f"need 0 <= p_min <= p_max <= 1, got "
                             f"({self.p_min}, {self.p_max})")
        for name in ("box_jitter_sigma", "fp_rate0", "fp_decay_beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class SimulatedDetector:
    """Emission-model detector: pure function of (world, summary, seed)."""

    def __init__(self, world: HiddenWorld, config: SimDetectorConfig = SimDetectorConfig()):
        self.world = world
        self.config = config

    def emission_probability(self, class_label: str, summary: LabeledSummary) -> float:
        f_c = summary.class_fractions.get(class_label, 0.0)
        return self.config.p_min + (self.config.p_max - self.config.p_min) * f_c

    def fp_rate(self, summary: LabeledSummary) -> float:
        return self.config.fp_rate0 * float(
            np.exp(-self.config.fp_decay_beta * summary.background_count))

    def detect(self, image_id: str, summary: LabeledSummary,
               run_seed: int, loop: int, tag: int = TAG_DETECT) -> list[Detection]:
        """All detections for one image, before any publish filtering.

        The per-image generator is keyed by (config seed, run seed, loop,
        stage tag, image index in sorted id order), so images can be
        processed in any order or in parallel. A distinct tag gives an
        independent stream (e.g. for evaluation passes).
        """
        image = self.world.images.get(image_id)
        if image is None:
            raise DetectorError(f"unknown image {image_id!r}")
        cfg = self.config
        rng = rng_for(cfg.seed, run_seed, loop, tag, self.world.image_index(image_id))

        detections: list[Detection] = []
        for obj in self.world.objects_for_image(image_id):
            if rng.random() >= self.emission_probability(obj.class_label, summary):
                continue
            box = self._jitter(obj.box, rng, image.width, image.height)
            score = self._clamped_beta(rng, cfg.tp_score_alpha, cfg.tp_score_beta)
            detections.append(Detection(image_id, box, obj.class_label, score, obj.obj_id))

        for _ in range(int(rng.poisson(self.fp_rate(summary)))):
            detections.append(self._false_positive(rng, image))
        return detections

    def detect_all(self, summary: LabeledSummary, run_seed: int, loop: int,
                   image_ids: list[str] | None = None,
                   tag: int = TAG_DETECT) -> list[Detection]:
        ids = sorted(image_ids) if image_ids is not None else self.world.image_order
        out: list[Detection] = []
        for image_id in ids:
            out.extend(self.detect(image_id, summary, run_seed, loop, tag))
        return out

    def _jitter(self, truth: BBox, rng: np.random.Generator,
                image_w: float, image_h: float) -> BBox:
        s = self.config.box_jitter_sigma
        g = rng.standard_normal(4)
        x1 = truth.x_min + s * truth.width * g[0]
        y1 = truth.y_min + s * truth.height * g[1]
        x2 = truth.x_max + s * truth.width * g[2]
        y2 = truth.y_max + s * truth.height * g[3]
        clipped = BBox(x1, y1, x2, y2).clipped(image_w, image_h) \
            if x1 < x2 and y1 < y2 else None
        if clipped is None:
            # Extreme draw inverted or expelled the box; keep the object visible.
            clipped = truth.clipped(image_w, image_h)
        return clipped if clipped is not None else truth

    def _false_positive(self, rng: np.random.Generator, image: ImageRecord) -> Detection:
        lo, hi = self.config.fp_size_range
        w = float(rng.uniform(lo, min(hi, image.width)))
        h = float(rng.uniform(lo, min(hi, image.height)))
        cx = float(rng.uniform(w / 2, image.width - w / 2))
        cy = float(rng.uniform(h / 2, image.height - h / 2))
        label = self.world.classes[int(rng.integers(len(self.world.classes)))]
        score = self._clamped_beta(rng, self.config.fp_score_alpha, self.config.fp_score_beta)
        return Detection(image.image_id,
                         BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                         label, score, None)

    @staticmethod
    def _clamped_beta(rng: np.random.Generator, a: float, b: float) -> float:
        return float(np.clip(rng.beta(a, b), 1e-6, 1.0 - 1e-6))


def publishable(detections: list[Detection], threshold: float) -> list[Detection]:
    """Detections confident enough to send to workers."""
    return [d for d in detections if d.score >= threshold]


def filter_new(detections: list[Detection], existing: list[Annotation],
               dedup_iou: float = 0.5) -> list[Detection]:
    """Keep only genuinely novel detections.

    Drops any detection overlapping a non-Rejected annotation on the same
    image at or above dedup_iou (the object is already in the pipeline),
    then greedily self-deduplicates same-class detections keeping the
    highest score. Idempotent.
    """
    if not 0.0 < dedup_iou < 1.0:
        raise ValueError(f"dedup_iou must be in (0,1), got {dedup_iou}")
    occupied: dict[str, list[BBox]] = {}
    for ann in existing:
        if ann.state is not AnnotationState.REJECTED:
            occupied.setdefault(ann.image_id, []).append(ann.box)

    ranked = sorted(detections,
                    key=lambda d: (d.image_id, -d.score, d.box.x_min, d.box.y_min))
    kept: list[Detection] = []
    kept_by_image: dict[str, list[Detection]] = {}
    for det in ranked:
        if any(iou(det.box, b) >= dedup_iou for b in occupied.get(det.image_id, [])):
            continue
        siblings = kept_by_image.setdefault(det.image_id, [])
        if any(k.class_label == det.class_label and iou(det.box, k.box) >= dedup_iou
               for k in siblings):
            continue
        siblings.append(det)
        kept.append(det)
    return kept


# --- training-instance synthesis ---------------------------------------------


def anchor_features(anchors: list[BBox], objects: list[HiddenObject],
                    brightness: float = 1.0) -> np.ndarray:
    """Per-anchor feature vectors standing in for image content.

    Columns: best IoU against any true object; intersection fraction of
    the anchor covered by that object; log2 of anchor side relative to a
    reference side. Brightness scales the whole vector, mirroring a
    photometric augmentation's effect on real features.
    """
    n = len(anchors)
    out = np.zeros((n, FEATURE_DIM), dtype=np.float64)
    sides = np.sqrt(np.array([a.area for a in anchors])) if n else np.zeros(0)
    if objects:
        matrix = iou_matrix(anchors, [o.box for o in objects])
        best = matrix.argmax(axis=1)
        out[:, 0] = matrix[np.arange(n), best]
        A = np.array([[a.x_min, a.y_min, a.x_max, a.y_max] for a in anchors])
        B = np.array([[o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max]
                      for o in objects])[best]
        ix = np.minimum(A[:, 2], B[:, 2]) - np.maximum(A[:, 0], B[:, 0])
        iy = np.minimum(A[:, 3], B[:, 3]) - np.maximum(A[:, 1], B[:, 1])
        inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
        out[:, 1] = inter / (sides ** 2)
    if n:
        out[:, 2] = np.log2(sides / FEATURE_REF_SIDE)
    return out * brightness


def build_training_instances(world: HiddenWorld, store: LabelStore,
                             model, rng: np.random.Generator,
                             match_config: MatchConfig = MatchConfig(),
                             include_background: bool = True,
                             augment_enabled: bool = True,
                             anchor_stride: float = ANCHOR_STRIDE,
                             anchor_sizes: tuple[float, ...] = ANCHOR_SIZES,
                             image_ids: list[str] | None = None) -> list[TrainingInstance]:
    """One sampled batch per image that carries any settled supervision.

    The same geometric transform is applied to hidden objects and labels
    so features stay aligned with supervision, exactly as augmenting
    pixels would. ``model`` may be None (first pass: ignore rule inert).
    """
    labeled_states = {AnnotationState.SEED, AnnotationState.APPROVED}
    instances: list[TrainingInstance] = []
    ids = sorted(image_ids) if image_ids is not None else world.image_order
    for image_id in ids:
        image = world.images[image_id]
        labeled = [LabeledBox(a.box, a.class_label)
                   for a in sorted(store.annotations_for_image(image_id, labeled_states),
                                   key=lambda a: a.ann_id)]
        background = [a.box for a in sorted(
            store.annotations_for_image(image_id, {AnnotationState.BACKGROUND_CONFIRMED}),
            key=lambda a: a.ann_id)] if include_background else []
        if not labeled and not background:
            continue

        objects = world.objects_for_image(image_id)
        width, height = image.width, image.height
        brightness = 1.0
        if augment_enabled:
            transform = sample_transform(width, height, rng)
            labeled = apply_labeled(transform, labeled)
            background = apply_boxes(transform, background)
            moved_objects = []
            for obj in objects:
                moved = apply_boxes(transform, [obj.box])
                if moved:
                    moved_objects.append(HiddenObject(obj.obj_id, obj.image_id,
                                                      moved[0], obj.class_label))
            objects = moved_objects
            width, height = transform.out_width, transform.out_height
            brightness = transform.brightness
            if not labeled and not background:
                continue

        anchors = generate_anchors(width, height, anchor_stride, anchor_sizes)
        if not anchors:
            continue
        features = anchor_features(anchors, objects, brightness)
        scores = model.predict(features)[0] if model is not None else None
        batch, stats = match_and_sample(anchors, labeled, background, scores,
                                        rng, match_config)
        if not batch:
            continue
        idx = [a.index for a in batch]
        kinds = [a.kind for a in batch]
        prob_targets = np.array([1.0 if a.kind.name == "POSITIVE" else 0.0 for a in batch])
        delta_targets = np.zeros((len(batch), 4))
        for row, a in enumerate(batch):
            if a.target_delta is not None:
                delta_targets[row] = (a.target_delta.tx, a.target_delta.ty,
                                      a.target_delta.tw, a.target_delta.th)
        instances.append(TrainingInstance(features[idx], kinds, prob_targets,
                                          delta_targets,
                                          meta={"image_id": image_id,
                                                "stats": stats}))
    return instances
