"""In-process bindings for ML training loops.

Every function here delegates to the groundkit core and keeps plain
numbers, strings, lists, and dicts on the boundary; no metric or parsing
logic is reimplemented. Parse failures come back as structured results,
never exceptions, so a training loop can score them.
"""

from __future__ import annotations

import sys
from types import ModuleType
from typing import Mapping, Sequence

try:
    from groundkit import codec as _codec
    from groundkit import dataset as _dataset
    from groundkit import evaluation as _evaluation
    from groundkit import geometry as _geometry
except ImportError as exc:  # pragma: no cover - exercised only without the core
    raise ImportError(
        "groundkit-bindings requires the groundkit core package; "
        "install groundkit and retry"
    ) from exc

__all__ = [
    "encode_box",
    "parse_box",
    "quantize_box",
    "dequantize_box",
    "iou",
    "dice",
    "score_sample",
    "evaluate_run",
    "bind_all",
]


def _pixel_box(box: Sequence[float]) -> "_geometry.PixelBox":
    x_left, y_top, x_right, y_bottom = box
    return _geometry.PixelBox(
        float(x_left), float(y_top), float(x_right), float(y_bottom)
    )


def _norm_box(box: Sequence[int]) -> "_codec.NormBox":
    qx_left, qy_top, qx_right, qy_bottom = box
    return _codec.NormBox(int(qx_left), int(qy_top), int(qx_right), int(qy_bottom))


def encode_box(qx_left: int, qy_top: int, qx_right: int, qy_bottom: int) -> str:
    """Canonical token string for a quantized box."""
    return _codec.encode(_norm_box((qx_left, qy_top, qx_right, qy_bottom)))


def parse_box(text: str) -> dict:
    """First box pattern in free text, as a structured result.

    Returns {"box": [x1, y1, x2, y2] or None,
             "failure": "no_match" | "out_of_range" | "corner_order" | None,
             "span": [start, end] or None}.
    """
    outcome = _codec.parse(text)
    return {
        "box": list(outcome.box.as_tuple()) if outcome.box is not None else None,
        "failure": outcome.failure.value if outcome.failure is not None else None,
        "span": list(outcome.span) if outcome.span is not None else None,
    }


def quantize_box(
    box: Sequence[float], image_width: int, image_height: int
) -> list[int]:
    """Pixel box -> quantized integer corners on the [0, 100] grid."""
    nb = _codec.quantize(_pixel_box(box), image_width, image_height)
    return list(nb.as_tuple())


def dequantize_box(
    box: Sequence[int], image_width: int, image_height: int
) -> list[float]:
    """Quantized corners -> pixel coordinates in the original image."""
    pb = _codec.dequantize(_norm_box(box), image_width, image_height)
    return list(pb.as_tuple())


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Intersection over union of two pixel boxes."""
    return _geometry.iou(_pixel_box(box_a), _pixel_box(box_b))


def dice(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    """Dice coefficient of two pixel boxes."""
    return _geometry.dice(_pixel_box(box_a), _pixel_box(box_b))


def score_sample(sample: Mapping, raw_text: str) -> dict:
    """Score one raw output against a manifest-schema sample record."""
    record = _dataset.sample_from_record(sample)
    score = _evaluation.score_sample(record, raw_text)
    return {
        "sample_id": score.sample_id,
        "valid": score.valid,
        "iou": score.iou,
        "dice": score.dice,
        "failure": score.failure.value if score.failure is not None else None,
    }


def evaluate_run(samples: Sequence[Mapping], predictions: Sequence[Mapping]) -> dict:
    """Score a whole run and aggregate into the fixed-category report.

    ``samples`` are manifest-schema records; ``predictions`` are
    {"sample_id", "raw_text"} records pairing one-to-one with them.
    """
    records = [_dataset.sample_from_record(s) for s in samples]
    texts = {p["sample_id"]: p["raw_text"] for p in predictions}
    if len(texts) != len(predictions):
        raise _evaluation.AlignmentError("duplicate sample_id among predictions")
    report = _evaluation.evaluate_files(records, texts)
    return {
        "per_category": [
            {
                "category": m.category.value,
                "n_samples": m.n_samples,
                "n_valid": m.n_valid,
                "mean_iou": m.mean_iou,
                "mean_dice": m.mean_dice,
            }
            for m in report.per_category
        ],
        "macro_iou": report.macro_iou,
        "macro_dice": report.macro_dice,
        "w_iou": report.w_iou,
        "w_dice": report.w_dice,
        "total_samples": report.total_samples,
    }


def bind_all() -> ModuleType:
    """The module object exposing all eight bound functions."""
    return sys.modules[__name__]
