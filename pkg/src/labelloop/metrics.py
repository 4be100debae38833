"""Evaluation against the hidden world: AP, mAP, label precision, coverage.

All matching is greedy one-to-one by descending confidence at an IoU
threshold, class handled by the caller or per-class wrappers. Nothing in
here reads simulator provenance fields; truth association is geometric.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .detector import Detection, HiddenObject, HiddenWorld
from .geometry import BBox, iou
from .labelstore import Annotation

logger = logging.getLogger(__name__)

MATCH_IOU = 0.5


def _greedy_match(boxes: list[BBox], image_ids: list[str],
                  truths: list[HiddenObject], iou_thresh: float) -> list[bool]:
    """Match candidate boxes (already ranked) 1-1 to truths. True = matched."""
    truth_by_image: dict[str, list[tuple[int, HiddenObject]]] = {}
    for idx, t in enumerate(truths):
        truth_by_image.setdefault(t.image_id, []).append((idx, t))
    used = [False] * len(truths)
    out: list[bool] = []
    for box, image_id in zip(boxes, image_ids):
        best_idx = -1
        best_iou = iou_thresh
        for idx, t in truth_by_image.get(image_id, []):
            if used[idx]:
                continue
            v = iou(box, t.box)
            if v >= best_iou:
                best_iou = v
                best_idx = idx
        if best_idx >= 0:
            used[best_idx] = True
            out.append(True)
        else:
            out.append(False)
    return out


def average_precision(detections: list[Detection], truths: list[HiddenObject],
                      iou_thresh: float = MATCH_IOU) -> float:
    """All-point interpolated AP for one class.

    Detections are ranked by descending score; each matches at most one
    unmatched truth at IoU >= iou_thresh. AP integrates the interpolated
    precision envelope over recall.
    """
    if not truths:
        raise ValueError("AP undefined with zero truths")
    if not detections:
        return 0.0
    ranked = sorted(detections, key=lambda d: (-d.score, d.image_id,
                                               d.box.x_min, d.box.y_min))
    hits = _greedy_match([d.box for d in ranked], [d.image_id for d in ranked],
                         truths, iou_thresh)
    tp = np.cumsum(np.asarray(hits, dtype=np.float64))
    fp = np.cumsum(~np.asarray(hits, dtype=bool))
    recall = tp / len(truths)
    precision = tp / (tp + fp)

    # Precision envelope: at each recall level, the best precision at or
    # beyond it; integrate over recall steps.
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p, hit in zip(recall, env, hits):
        if hit:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def evaluate_map(detections: list[Detection], world: HiddenWorld,
                 iou_thresh: float = MATCH_IOU) -> tuple[dict[str, float], float | None]:
    """Per-class AP plus their unweighted mean.

    Classes with zero hidden truths are excluded from the mean with a
    warning; the mean is None when no class is evaluable.
    """
    totals = world.class_totals()
    per_class: dict[str, float] = {}
    for name in world.classes:
        if totals.get(name, 0) == 0:
            logger.warning("class %s has no truths; excluded from mAP", name)
            continue
        dets = [d for d in detections if d.class_label == name]
        truths = [t for t in world.objects if t.class_label == name]
        per_class[name] = average_precision(dets, truths, iou_thresh)
    mean = float(np.mean(list(per_class.values()))) if per_class else None
    return per_class, mean


@dataclass(frozen=True)
class LabelQuality:
    """How settled labels compare to the hidden world, per class."""

    precision: dict[str, float]
    coverage: float
    coverage_classful: float
    matched: int
    total_objects: int


def label_quality(annotations: list[Annotation], world: HiddenWorld,
                  iou_thresh: float = MATCH_IOU) -> LabelQuality:
    """Precision and coverage of a set of object labels.

    Precision per class: fraction of labels of that class matching an
    unmatched true object of the same class. Coverage: fraction of all
    true objects matched by any label regardless of class (the classful
    variant requires the class to agree).
    """
    ordered = sorted(annotations, key=lambda a: a.ann_id)

    precision: dict[str, float] = {}
    classful_matched = 0
    for name in world.classes:
        anns = [a for a in ordered if a.class_label == name]
        truths = [t for t in world.objects if t.class_label == name]
        if not anns:
            continue
        hits = _greedy_match([a.box for a in anns], [a.image_id for a in anns],
                             truths, iou_thresh)
        precision[name] = float(np.mean(hits))
        classful_matched += int(np.sum(hits))

    hits_any = _greedy_match([a.box for a in ordered], [a.image_id for a in ordered],
                             world.objects, iou_thresh)
    matched = int(np.sum(hits_any))
    total = len(world.objects)
    return LabelQuality(precision, matched / total if total else 0.0,
                        classful_matched / total if total else 0.0,
                        matched, total)


def recovered_objects(annotations: list[Annotation], targets: list[HiddenObject],
                      iou_thresh: float = MATCH_IOU) -> int:
    """How many of the given true objects are matched by any label."""
    ordered = sorted(annotations, key=lambda a: a.ann_id)
    hits = _greedy_match([a.box for a in ordered], [a.image_id for a in ordered],
                         targets, iou_thresh)
    return int(np.sum(hits))
