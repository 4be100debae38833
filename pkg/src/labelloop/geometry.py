"""Bounding-box and point geometry shared by every pipeline stage.

Pure functions over immutable values; safe to call from any thread.
Coordinates are real-valued pixels in the image frame, origin top-left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Raised when a box or point violates its invariants."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle with strictly positive area.

    Attributes:
        x_min, y_min: top-left corner.
        x_max, y_max: bottom-right corner (exclusive edge for pixel counts).
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise GeometryError(f"non-finite box coordinate: {self}")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise GeometryError(f"box has non-positive area: {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    def clipped(self, image_w: float, image_h: float) -> BBox | None:
        """Clip to [0, w] x [0, h]; None if clipping collapses a side.

        Degenerate results are rejected rather than silently repaired.
        """
        x1 = max(0.0, min(self.x_min, image_w))
        y1 = max(0.0, min(self.y_min, image_h))
        x2 = max(0.0, min(self.x_max, image_w))
        y2 = max(0.0, min(self.y_max, image_h))
        if x1 >= x2 or y1 >= y2:
            return None
        return BBox(x1, y1, x2, y2)

    def expanded(self, factor: float) -> BBox:
        """Return a box scaled about its center by ``factor``."""
        cx, cy = self.center
        hw = self.width * factor / 2
        hh = self.height * factor / 2
        return BBox(cx - hw, cy - hh, cx + hw, cy + hh)

    def contains_box(self, other: BBox) -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def as_xywh(self) -> list[float]:
        """COCO-style [x, y, width, height]."""
        return [self.x_min, self.y_min, self.width, self.height]

    @classmethod
    def from_xywh(cls, xywh) -> BBox:
        x, y, w, h = xywh
        return cls(x, y, x + w, y + h)


@dataclass(frozen=True)
class Dot:
    """A legacy expert point label marking one object without a box."""

    x: float
    y: float
    class_label: str

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite dot coordinate: {self}")


@dataclass(frozen=True)
class BoxDelta:
    """Parameterized box offsets: center shift over anchor size, log size ratio."""

    tx: float
    ty: float
    tw: float
    th: float

    def __post_init__(self):
        for v in (self.tx, self.ty, self.tw, self.th):
            if not math.isfinite(v):
                raise GeometryError(f"non-finite delta component: {self}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.tx, self.ty, self.tw, self.th)


ZERO_DELTA = BoxDelta(0.0, 0.0, 0.0, 0.0)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Symmetric; exactly 1.0 iff the boxes are equal.
    """
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    # Plain float even when the coordinates are numpy scalars.
    return float(inter / union)


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an (n, 4) float array of [x_min, y_min, x_max, y_max]."""
    return np.array([[b.x_min, b.y_min, b.x_max, b.y_max] for b in boxes],
                    dtype=np.float64).reshape(len(boxes), 4)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two box lists, shape (len(a), len(b)).

    Vectorized; agrees with :func:`iou` elementwise.
    """
    A = boxes_to_array(a)
    B = boxes_to_array(b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.float64)
    ix = (np.minimum(A[:, None, 2], B[None, :, 2])
          - np.maximum(A[:, None, 0], B[None, :, 0]))
    iy = (np.minimum(A[:, None, 3], B[None, :, 3])
          - np.maximum(A[:, None, 1], B[None, :, 1]))
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def dot_to_seed_box(d: Dot, half_extent: float, image_extent: tuple[float, float]) -> BBox:
    """Square seed box of side ``2 * half_extent`` centered on a dot.

    Clipped to the image; the dot must lie inside the image.

    Raises:
        GeometryError: dot outside the image, or non-positive half_extent.
    """
    if half_extent <= 0:
        raise GeometryError(f"half_extent must be positive, got {half_extent}")
    w, h = image_extent
    if not (0 <= d.x <= w and 0 <= d.y <= h):
        raise GeometryError(f"dot ({d.x}, {d.y}) outside image extent ({w}, {h})")
    raw = BBox(d.x - half_extent, d.y - half_extent, d.x + half_extent, d.y + half_extent)
    clipped = raw.clipped(w, h)
    if clipped is None:
        raise GeometryError(f"seed box for dot ({d.x}, {d.y}) collapsed after clipping")
    return clipped


def encode_delta(anchor: BBox, target: BBox) -> BoxDelta:
    """Encode ``target`` relative to ``anchor``: center offsets over anchor size, log size ratios."""
    acx, acy = anchor.center
    tcx, tcy = target.center
    return BoxDelta(
        (tcx - acx) / anchor.width,
        (tcy - acy) / anchor.height,
        math.log(target.width / anchor.width),
        math.log(target.height / anchor.height),
    )


def decode_delta(anchor: BBox, delta: BoxDelta) -> BBox:
    """Invert :func:`encode_delta`."""
    acx, acy = anchor.center
    cx = acx + delta.tx * anchor.width
    cy = acy + delta.ty * anchor.height
    w = anchor.width * math.exp(delta.tw)
    h = anchor.height * math.exp(delta.th)
    return BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
