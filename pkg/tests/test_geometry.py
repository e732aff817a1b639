"""Box arithmetic tests, including the rasterization brute-force oracle."""

import random

import numpy as np
import pytest

from groundkit.geometry import PixelBox, area, dice, intersection_area, iou


def test_area_square():
    assert area(PixelBox(0, 0, 10, 10)) == 100


def test_area_zero_width_degenerate():
    assert area(PixelBox(5, 5, 5, 9)) == 0


def test_area_fractional_corners():
    assert area(PixelBox(2.5, 0, 7.5, 4)) == 20


def test_iou_identical_boxes():
    b = PixelBox(3, 4, 9, 11)
    assert iou(b, b) == 1.0


def test_iou_disjoint_boxes():
    assert iou(PixelBox(0, 0, 10, 10), PixelBox(20, 20, 30, 30)) == 0.0


def test_iou_partial_overlap():
    value = iou(PixelBox(0, 0, 10, 10), PixelBox(5, 5, 15, 15))
    assert value == pytest.approx(25 / 175, abs=1e-15)


def test_dice_identical_boxes():
    b = PixelBox(1, 1, 4, 4)
    assert dice(b, b) == 1.0


def test_dice_partial_overlap():
    assert dice(PixelBox(0, 0, 10, 10), PixelBox(5, 5, 15, 15)) == 0.25


def test_dice_disjoint_boxes():
    assert dice(PixelBox(0, 0, 10, 10), PixelBox(20, 20, 30, 30)) == 0.0


def test_both_degenerate_defined_as_zero():
    p = PixelBox(5, 5, 5, 5)
    q = PixelBox(7, 7, 7, 7)
    assert iou(p, q) == 0.0
    assert dice(p, q) == 0.0
    assert iou(p, p) == 0.0


@pytest.mark.parametrize(
    "coords",
    [
        (10, 0, 5, 5),     # x_left > x_right
        (0, 10, 5, 5),     # y_top > y_bottom
        (-1, 0, 5, 5),     # negative
        (float("nan"), 0, 5, 5),
        (0, 0, float("inf"), 5),
    ],
)
def test_invalid_boxes_rejected(coords):
    with pytest.raises(ValueError):
        PixelBox(*coords)


def _random_box(rng, lo=0.0, hi=100.0):
    x1, x2 = sorted(rng.uniform(lo, hi) for _ in range(2))
    y1, y2 = sorted(rng.uniform(lo, hi) for _ in range(2))
    return PixelBox(x1, y1, x2, y2)


def test_symmetry_and_range():
    rng = random.Random(7)
    for _ in range(2000):
        a = _random_box(rng)
        b = _random_box(rng)
        assert iou(a, b) == iou(b, a)
        assert dice(a, b) == dice(b, a)
        assert 0.0 <= iou(a, b) <= 1.0
        assert 0.0 <= dice(a, b) <= 1.0


def test_dice_iou_identity():
    rng = random.Random(11)
    for _ in range(2000):
        a = _random_box(rng)
        b = _random_box(rng)
        i = iou(a, b)
        assert abs(dice(a, b) - 2 * i / (1 + i)) <= 1e-12


def test_translation_invariance():
    rng = random.Random(13)
    for _ in range(500):
        a = _random_box(rng)
        b = _random_box(rng)
        dx, dy = rng.uniform(0, 50), rng.uniform(0, 50)
        assert abs(iou(a, b) - iou(a.shift(dx, dy), b.shift(dx, dy))) <= 1e-12
        assert abs(dice(a, b) - dice(a.shift(dx, dy), b.shift(dx, dy))) <= 1e-12


def _integer_box(rng, size=120, min_side=10):
    x1 = rng.randrange(0, size - min_side)
    y1 = rng.randrange(0, size - min_side)
    x2 = rng.randrange(x1 + min_side, size + 1)
    y2 = rng.randrange(y1 + min_side, size + 1)
    return PixelBox(float(x1), float(y1), float(x2), float(y2))


def raster_metrics(a: PixelBox, b: PixelBox, size: int = 121) -> tuple[float, float]:
    """Brute-force IoU/Dice by counting integer pixel cells.

    A cell (i, j) is covered when i is in [x_left, x_right) and j in
    [y_top, y_bottom), mirroring the half-open interval convention.
    """
    grid_a = np.zeros((size, size), dtype=bool)
    grid_b = np.zeros((size, size), dtype=bool)
    grid_a[int(a.y_top):int(a.y_bottom), int(a.x_left):int(a.x_right)] = True
    grid_b[int(b.y_top):int(b.y_bottom), int(b.x_left):int(b.x_right)] = True
    inter = int(np.logical_and(grid_a, grid_b).sum())
    union = int(np.logical_or(grid_a, grid_b).sum())
    total = int(grid_a.sum()) + int(grid_b.sum())
    raster_iou = inter / union if union else 0.0
    raster_dice = 2 * inter / total if total else 0.0
    return raster_iou, raster_dice


def test_metrics_match_rasterization_oracle():
    rng = random.Random(42)
    for _ in range(2000):
        a = _integer_box(rng)
        b = _integer_box(rng)
        oracle_iou, oracle_dice = raster_metrics(a, b)
        assert abs(iou(a, b) - oracle_iou) <= 0.02
        assert abs(dice(a, b) - oracle_dice) <= 0.02


def test_intersection_area_disjoint_is_zero():
    assert intersection_area(PixelBox(0, 0, 1, 1), PixelBox(2, 2, 3, 3)) == 0.0
