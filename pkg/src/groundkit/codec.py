"""Bidirectional transform between pixel boxes and quantized box text.

Model-facing boxes are integer corners on a [0, 100] grid relative to the
image dimensions, serialized as ``{<X_left><Y_top><X_right><Y_bottom>}``
with no whitespace. This token string is a wire format and must stay
bit-exact. ``parse`` extracts the first such pattern from arbitrary
free text; failures are returned as values, never raised, because the
evaluation layer scores them.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass

from .geometry import PixelBox

COORD_MAX = 100

# Candidate grammar: 1-3 decimal digits per slot, no internal whitespace.
# Leading zeros are accepted on input; range/order checks come after.
_BOX_PATTERN = re.compile(
    r"\{<(\d{1,3})><(\d{1,3})><(\d{1,3})><(\d{1,3})>\}", re.ASCII
)


class DimensionError(ValueError):
    """Image width or height is not a positive integer."""


class BoundsError(ValueError):
    """Pixel box extends outside the image it belongs to."""


@dataclass(frozen=True)
class NormBox:
    """Quantized integer box in the [0, 100] token coordinate system."""

    qx_left: int
    qy_top: int
    qx_right: int
    qy_bottom: int

    def __post_init__(self) -> None:
        coords = (self.qx_left, self.qy_top, self.qx_right, self.qy_bottom)
        for c in coords:
            if not isinstance(c, int) or isinstance(c, bool):
                raise ValueError(f"quantized coordinates must be int: {coords!r}")
            if not 0 <= c <= COORD_MAX:
                raise ValueError(f"quantized coordinate {c} outside [0, {COORD_MAX}]")
        if self.qx_left > self.qx_right:
            raise ValueError(f"qx_left ({self.qx_left}) > qx_right ({self.qx_right})")
        if self.qy_top > self.qy_bottom:
            raise ValueError(f"qy_top ({self.qy_top}) > qy_bottom ({self.qy_bottom})")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.qx_left, self.qy_top, self.qx_right, self.qy_bottom)


class ParseFailure(enum.Enum):
    """Why a piece of model output yielded no box."""

    NO_MATCH = "no_match"
    OUT_OF_RANGE = "out_of_range"
    CORNER_ORDER = "corner_order"


@dataclass(frozen=True)
class ParseOutcome:
    """Result of scanning text for a box pattern.

    Exactly one of ``box`` / ``failure`` is set. ``span`` gives the
    (start, end) character offsets of the candidate pattern; it is None
    only when no candidate was found at all.
    """

    box: NormBox | None
    failure: ParseFailure | None
    span: tuple[int, int] | None

    def __post_init__(self) -> None:
        if (self.box is None) == (self.failure is None):
            raise ValueError("exactly one of box/failure must be set")
        if (self.span is None) != (self.failure is ParseFailure.NO_MATCH):
            raise ValueError("span must be present iff a candidate was found")

    @property
    def ok(self) -> bool:
        return self.box is not None


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _check_dimensions(image_width: int, image_height: int) -> None:
    if image_width <= 0 or image_height <= 0:
        raise DimensionError(
            f"image dimensions must be positive, got {image_width}x{image_height}"
        )


def quantize(box: PixelBox, image_width: int, image_height: int) -> NormBox:
    """Map a pixel box onto the [0, 100] integer grid.

    Each coordinate becomes round(coord * 100 / dimension) with half-up
    rounding, clamped to [0, 100].

    Raises:
        DimensionError: if a dimension is <= 0.
        BoundsError: if the box extends past the image dimensions.
    """
    _check_dimensions(image_width, image_height)
    if box.x_right > image_width or box.y_bottom > image_height:
        raise BoundsError(
            f"box {box.as_tuple()} exceeds image bounds "
            f"{image_width}x{image_height}"
        )

    def q(coord: float, dim: int) -> int:
        value = _round_half_up(coord * COORD_MAX / dim)
        return max(0, min(COORD_MAX, value))

    return NormBox(
        q(box.x_left, image_width),
        q(box.y_top, image_height),
        q(box.x_right, image_width),
        q(box.y_bottom, image_height),
    )


def dequantize(nb: NormBox, image_width: int, image_height: int) -> PixelBox:
    """Map a quantized box back to pixel coordinates (q * dimension / 100)."""
    _check_dimensions(image_width, image_height)
    return PixelBox(
        nb.qx_left * image_width / COORD_MAX,
        nb.qy_top * image_height / COORD_MAX,
        nb.qx_right * image_width / COORD_MAX,
        nb.qy_bottom * image_height / COORD_MAX,
    )


def encode(nb: NormBox) -> str:
    """Serialize a quantized box to its canonical token string."""
    return f"{{<{nb.qx_left}><{nb.qy_top}><{nb.qx_right}><{nb.qy_bottom}>}}"


def parse(text: str) -> ParseOutcome:
    """Extract the first box pattern from free text.

    Scans left to right for the first substring matching the box grammar,
    then validates coordinate range and corner order. Later candidates are
    never considered: the strict single-candidate rule keeps "invalid
    output" distinguishable from a low score. Never raises on any input
    string.
    """
    match = _BOX_PATTERN.search(text)
    if match is None:
        return ParseOutcome(box=None, failure=ParseFailure.NO_MATCH, span=None)
    span = match.span()
    values = tuple(int(g) for g in match.groups())
    if any(v > COORD_MAX for v in values):
        return ParseOutcome(box=None, failure=ParseFailure.OUT_OF_RANGE, span=span)
    qx_left, qy_top, qx_right, qy_bottom = values
    if qx_left > qx_right or qy_top > qy_bottom:
        return ParseOutcome(box=None, failure=ParseFailure.CORNER_ORDER, span=span)
    return ParseOutcome(
        box=NormBox(qx_left, qy_top, qx_right, qy_bottom), failure=None, span=span
    )
