"""Geometric and photometric augmentation of labeled samples.

A transform is sampled once and can then be applied to any number of box
sets, so supervision and simulated image content stay geometrically
aligned. Pixel work is left to the consumer via the recorded brightness
factor and crop window. A crop keeps a box only if at least a quarter of
its area survives inside the window; kept boxes are clipped and
re-expressed in window coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import BBox
from .sampling import LabeledBox

BRIGHTNESS_RANGE = (0.8, 1.2)
CROP_RANGE = (0.8, 1.0)
MIN_BOX_RETENTION = 0.25


@dataclass(frozen=True)
class Transform:
    """One sampled augmentation: flips, brightness factor, crop window.

    The crop window lives in the flipped input frame; outputs are in
    window coordinates.
    """

    width: float
    height: float
    flip_h: bool
    flip_v: bool
    brightness: float
    crop: BBox

    @property
    def out_width(self) -> float:
        return self.crop.width

    @property
    def out_height(self) -> float:
        return self.crop.height

    def meta(self) -> dict:
        return {
            "flip_h": self.flip_h,
            "flip_v": self.flip_v,
            "brightness": round(self.brightness, 6),
            "crop": [round(v, 6) for v in (self.crop.x_min, self.crop.y_min,
                                           self.crop.width, self.crop.height)],
        }


@dataclass(frozen=True)
class AugmentedSample:
    width: float
    height: float
    boxes: tuple[LabeledBox, ...]
    meta: dict = field(default_factory=dict)


def flip_box_h(box: BBox, width: float) -> BBox:
    return BBox(width - box.x_max, box.y_min, width - box.x_min, box.y_max)


def flip_box_v(box: BBox, height: float) -> BBox:
    return BBox(box.x_min, height - box.y_max, box.x_max, height - box.y_min)


def sample_transform(width: float, height: float, rng: np.random.Generator,
                     brightness_range: tuple[float, float] = BRIGHTNESS_RANGE,
                     crop_range: tuple[float, float] = CROP_RANGE) -> Transform:
    """Draw one augmentation; deterministic for a fixed generator state."""
    flip_h = bool(rng.random() < 0.5)
    flip_v = bool(rng.random() < 0.5)
    brightness = float(rng.uniform(*brightness_range))
    ratio = float(rng.uniform(*crop_range))
    crop_w, crop_h = width * ratio, height * ratio
    x0 = float(rng.uniform(0.0, width - crop_w)) if crop_w < width else 0.0
    y0 = float(rng.uniform(0.0, height - crop_h)) if crop_h < height else 0.0
    return Transform(float(width), float(height), flip_h, flip_v, brightness,
                     BBox(x0, y0, x0 + crop_w, y0 + crop_h))


def apply_boxes(transform: Transform, boxes: list[BBox],
                min_retention: float = MIN_BOX_RETENTION) -> list[BBox]:
    """Transform boxes into the output frame, dropping mostly-cropped ones.

    Output order follows input order; dropped boxes simply vanish, so the
    result may be shorter than the input.
    """
    window = transform.crop
    out: list[BBox] = []
    for box in boxes:
        if transform.flip_h:
            box = flip_box_h(box, transform.width)
        if transform.flip_v:
            box = flip_box_v(box, transform.height)
        x1 = max(box.x_min, window.x_min)
        y1 = max(box.y_min, window.y_min)
        x2 = min(box.x_max, window.x_max)
        y2 = min(box.y_max, window.y_max)
        if x2 <= x1 or y2 <= y1:
            continue
        if (x2 - x1) * (y2 - y1) / box.area < min_retention:
            continue
        out.append(BBox(x1 - window.x_min, y1 - window.y_min,
                        x2 - window.x_min, y2 - window.y_min))
    return out


def apply_labeled(transform: Transform, boxes: list[LabeledBox],
                  min_retention: float = MIN_BOX_RETENTION) -> list[LabeledBox]:
    out: list[LabeledBox] = []
    for lb in boxes:
        moved = apply_boxes(transform, [lb.box], min_retention)
        if moved:
            out.append(LabeledBox(moved[0], lb.class_label))
    return out


def augment(width: float, height: float, boxes: list[LabeledBox],
            rng: np.random.Generator,
            brightness_range: tuple[float, float] = BRIGHTNESS_RANGE,
            crop_range: tuple[float, float] = CROP_RANGE,
            min_box_retention: float = MIN_BOX_RETENTION) -> AugmentedSample:
    """Sample and apply one augmentation to a labeled box set."""
    transform = sample_transform(width, height, rng, brightness_range, crop_range)
    kept = apply_labeled(transform, boxes, min_box_retention)
    return AugmentedSample(transform.out_width, transform.out_height,
                           tuple(kept), transform.meta())
