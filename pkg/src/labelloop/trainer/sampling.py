"""Anchor generation, matching, and batch sampling for half-labeled images.

Assignment precedence per anchor, highest first:
  1. POSITIVE: overlaps a labeled object at or above the match threshold,
     or is that object's best anchor (every object keeps at least one).
  2. FORCED_NEGATIVE: overlaps a confirmed-background box at or above the
     match threshold. These regions are double-checked empty, so they are
     certain negatives and are batched before any random ones.
  3. IGNORED: unmatched but scored above the ignore threshold by the
     current model. On a half-labeled image such an anchor is likely an
     unlabeled real object; it must not be pushed toward background.
  4. RANDOM_NEGATIVE: below the negative threshold against every labeled
     object, randomly drawn to fill the batch.

Anchors in the ambiguous band between the negative and match thresholds
are left out entirely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..geometry import BBox, BoxDelta, encode_delta, iou_matrix
from .loss import AnchorKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledBox:
    box: BBox
    class_label: str


@dataclass(frozen=True)
class MatchConfig:
    batch_size: int = 256
    positive_fraction: float = 0.5
    match_iou: float = 0.7
    negative_iou: float = 0.3
    ignore_threshold: float = 0.9
    ignore_enabled: bool = True


@dataclass(frozen=True)
class AnchorAssignment:
    index: int
    kind: AnchorKind
    target_delta: BoxDelta | None = None
    matched_class: str | None = None


@dataclass(frozen=True)
class MatchStats:
    positives: int
    forced_negatives: int
    random_negatives: int
    ignored: int
    excluded: int

    @property
    def counted(self) -> int:
        return self.positives + self.forced_negatives + self.random_negatives


def generate_anchors(image_w: float, image_h: float, stride: float,
                     sizes: tuple[float, ...]) -> list[BBox]:
    """Square anchors of the given side lengths on a regular grid.

    Centers start at stride/2 and step by stride; anchors are clipped to
    the image and degenerate ones dropped.
    """
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    anchors: list[BBox] = []
    y = stride / 2.0
    while y < image_h:
        x = stride / 2.0
        while x < image_w:
            for side in sizes:
                half = side / 2.0
                clipped = BBox(x - half, y - half, x + half, y + half).clipped(image_w, image_h)
                if clipped is not None:
                    anchors.append(clipped)
            x += stride
        y += stride
    return anchors


def match_anchors(anchors: list[BBox], objects: list[LabeledBox],
                  background: list[BBox], scores: np.ndarray | None,
                  config: MatchConfig = MatchConfig()) -> list[AnchorAssignment | None]:
    """Assign a kind to every anchor; None marks the ambiguous band.

    ``scores`` is the current model's objectness per anchor; pass None
    when no model exists yet, which disables the ignore rule.
    """
    n = len(anchors)
    if scores is not None and len(scores) != n:
        raise ValueError(f"scores length {len(scores)} != anchors length {n}")
    assignments: list[AnchorAssignment | None] = [None] * n
    if n == 0:
        return assignments

    obj_iou = iou_matrix(anchors, [o.box for o in objects]) if objects else None
    bg_iou = iou_matrix(anchors, background) if background else None

    positive_idx: set[int] = set()
    matched_obj: dict[int, int] = {}
    if obj_iou is not None:
        best_per_anchor = obj_iou.argmax(axis=1)
        best_val = obj_iou.max(axis=1)
        for i in range(n):
            if best_val[i] >= config.match_iou:
                positive_idx.add(i)
                matched_obj[i] = int(best_per_anchor[i])
        # Every object keeps its best-overlapping anchor even below threshold.
        for j in range(len(objects)):
            col = obj_iou[:, j]
            i = int(col.argmax())
            if col[i] > 0.0:
                positive_idx.add(i)
                if i not in matched_obj or obj_iou[i, matched_obj[i]] < col[i]:
                    matched_obj[i] = j

    for i in sorted(positive_idx):
        j = matched_obj[i]
        assignments[i] = AnchorAssignment(i, AnchorKind.POSITIVE,
                                          encode_delta(anchors[i], objects[j].box),
                                          objects[j].class_label)

    use_ignore = config.ignore_enabled and scores is not None
    for i in range(n):
        if assignments[i] is not None:
            continue
        if bg_iou is not None and bg_iou[i].max() >= config.match_iou:
            assignments[i] = AnchorAssignment(i, AnchorKind.FORCED_NEGATIVE)
            continue
        max_obj = float(obj_iou[i].max()) if obj_iou is not None else 0.0
        if max_obj >= config.negative_iou:
            continue  # ambiguous band, excluded
        if use_ignore and float(scores[i]) > config.ignore_threshold:
            assignments[i] = AnchorAssignment(i, AnchorKind.IGNORED)
        else:
            assignments[i] = AnchorAssignment(i, AnchorKind.RANDOM_NEGATIVE)
    return assignments


def sample_batch(assignments: list[AnchorAssignment | None],
                 rng: np.random.Generator,
                 config: MatchConfig = MatchConfig()) -> tuple[list[AnchorAssignment], MatchStats]:
    """Draw the training batch: capped positives, then forced, then random.

    Forced negatives fill the remainder before any random negative is
    drawn; both pools are subsampled uniformly when over budget.
    """
    positives = [a for a in assignments if a is not None and a.kind == AnchorKind.POSITIVE]
    if not positives:
        logger.warning("no positive anchor candidates; batch is negatives-only")
    forced = [a for a in assignments if a is not None and a.kind == AnchorKind.FORCED_NEGATIVE]
    randoms = [a for a in assignments if a is not None and a.kind == AnchorKind.RANDOM_NEGATIVE]
    ignored = sum(1 for a in assignments if a is not None and a.kind == AnchorKind.IGNORED)
    excluded = sum(1 for a in assignments if a is None)

    def subsample(pool: list[AnchorAssignment], k: int) -> list[AnchorAssignment]:
        if len(pool) <= k:
            return list(pool)
        picks = rng.choice(len(pool), size=k, replace=False)
        return [pool[int(i)] for i in sorted(picks)]

    pos_budget = int(config.batch_size * config.positive_fraction)
    chosen_pos = subsample(positives, pos_budget)
    room = config.batch_size - len(chosen_pos)
    chosen_forced = subsample(forced, room)
    room -= len(chosen_forced)
    chosen_rand = subsample(randoms, room)

    batch = chosen_pos + chosen_forced + chosen_rand
    stats = MatchStats(len(chosen_pos), len(chosen_forced), len(chosen_rand),
                       ignored, excluded)
    return batch, stats


def match_and_sample(anchors: list[BBox], objects: list[LabeledBox],
                     background: list[BBox], scores: np.ndarray | None,
                     rng: np.random.Generator,
                     config: MatchConfig = MatchConfig()) -> tuple[list[AnchorAssignment], MatchStats]:
    assignments = match_anchors(anchors, objects, background, scores, config)
    return sample_batch(assignments, rng, config)
