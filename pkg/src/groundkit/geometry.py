"""Axis-aligned box arithmetic: areas, intersection, IoU, Dice.

All geometry uses continuous (half-open interval) semantics in double
precision: a box covers [x_left, x_right) x [y_top, y_bottom), so
area = (x_right - x_left) * (y_bottom - y_top).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box in original image pixel coordinates.

    Corners are (x_left, y_top) top-left and (x_right, y_bottom)
    bottom-right. Coordinates must be finite, non-negative, and ordered
    (x_left <= x_right, y_top <= y_bottom). Degenerate boxes with zero
    width or height are allowed and have zero area.
    """

    x_left: float
    y_top: float
    x_right: float
    y_bottom: float

    def __post_init__(self) -> None:
        coords = (self.x_left, self.y_top, self.x_right, self.y_bottom)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite: {coords}")
        if any(c < 0 for c in coords):
            raise ValueError(f"box coordinates must be >= 0: {coords}")
        if self.x_left > self.x_right:
            raise ValueError(f"x_left ({self.x_left}) > x_right ({self.x_right})")
        if self.y_top > self.y_bottom:
            raise ValueError(f"y_top ({self.y_top}) > y_bottom ({self.y_bottom})")

    @property
    def width(self) -> float:
        return self.x_right - self.x_left

    @property
    def height(self) -> float:
        return self.y_bottom - self.y_top

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_left, self.y_top, self.x_right, self.y_bottom)

    def shift(self, dx: float, dy: float) -> "PixelBox":
        """Return the box translated by (dx, dy)."""
        return PixelBox(
            self.x_left + dx, self.y_top + dy, self.x_right + dx, self.y_bottom + dy
        )


def area(box: PixelBox) -> float:
    """Box area in px^2; zero for degenerate boxes."""
    return box.width * box.height


def intersection_area(a: PixelBox, b: PixelBox) -> float:
    """Area of the overlap region of two boxes (0 when disjoint)."""
    inter_w = min(a.x_right, b.x_right) - max(a.x_left, b.x_left)
    inter_h = min(a.y_bottom, b.y_bottom) - max(a.y_top, b.y_top)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    return inter_w * inter_h


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Returns 0.0 when the union area is zero (both boxes degenerate), so
    downstream aggregation never sees NaN.
    """
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def dice(a: PixelBox, b: PixelBox) -> float:
    """Dice coefficient 2|A n B| / (|A| + |B|) of two boxes, in [0, 1].

    Returns 0.0 when both areas are zero.
    """
    denom = area(a) + area(b)
    if denom <= 0:
        return 0.0
    return 2.0 * intersection_area(a, b) / denom
