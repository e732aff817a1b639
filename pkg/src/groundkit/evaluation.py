"""Score raw model text against ground truth and aggregate per category.

Aggregation semantics match the reporting convention of grounding
benchmarks with a fixed category set:

- a sample whose output cannot be parsed scores 0 for IoU and Dice and
  stays in its category's denominator;
- a category's mean is null (rendered "-") only when it has zero valid
  outputs;
- the macro mean averages the 8 category means with null counted as 0;
- weighted means weight category means by sample count, which equals the
  plain mean over all per-sample scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Iterator, Mapping
from xml.sax.saxutils import quoteattr

from .codec import ParseFailure, dequantize, parse
from .dataset import CATEGORY_ORDER, Category, GroundingSample
from .geometry import PixelBox, dice, iou


class AlignmentError(ValueError):
    """Scores and samples do not pair one-to-one by sample_id."""


@dataclass(frozen=True)
class SampleScore:
    """Metrics for a single sample; invalid outputs score 0."""

    sample_id: str
    valid: bool
    iou: float
    dice: float
    failure: ParseFailure | None = None

    def __post_init__(self) -> None:
        if not self.valid and (self.iou != 0 or self.dice != 0 or self.failure is None):
            raise ValueError("invalid scores must be 0 and carry a failure kind")
        if self.valid and self.failure is not None:
            raise ValueError("valid scores must not carry a failure kind")


@dataclass(frozen=True)
class CategoryMetrics:
    """Per-category aggregates; means are None when no output was valid."""

    category: Category
    n_samples: int
    n_valid: int
    mean_iou: float | None
    mean_dice: float | None


@dataclass(frozen=True)
class EvalReport:
    per_category: tuple[CategoryMetrics, ...]
    macro_iou: float
    macro_dice: float
    w_iou: float
    w_dice: float
    total_samples: int


def score_sample(sample: GroundingSample, raw_output: str) -> SampleScore:
    """Parse one raw model output and score it against the sample's box.

    Parse failures are not errors: they yield an invalid score of (0, 0)
    with the failure kind attached.
    """
    outcome = parse(raw_output)
    if not outcome.ok:
        return SampleScore(
            sample_id=sample.sample_id,
            valid=False,
            iou=0.0,
            dice=0.0,
            failure=outcome.failure,
        )
    predicted = dequantize(outcome.box, sample.image_width, sample.image_height)
    return SampleScore(
        sample_id=sample.sample_id,
        valid=True,
        iou=iou(predicted, sample.gt_box),
        dice=dice(predicted, sample.gt_box),
    )


def predicted_box(sample: GroundingSample, raw_output: str) -> PixelBox | None:
    """The predicted pixel box from raw output, or None if unparseable."""
    outcome = parse(raw_output)
    if not outcome.ok:
        return None
    return dequantize(outcome.box, sample.image_width, sample.image_height)


def macro_mean(values: Iterable[float | None]):
    """Mean over a fixed category list, nulls counted as 0.

    Works on floats or Decimals; the caller picks the arithmetic.
    """
    vals = list(values)
    total = sum(v for v in vals if v is not None)
    return total / len(vals)


def aggregate(
    scores: Iterable[SampleScore], samples: Iterable[GroundingSample]
) -> EvalReport:
    """Fold per-sample scores into the per-category report.

    Scores and samples must pair one-to-one by sample_id (any order).
    """
    scores = list(scores)
    samples = list(samples)
    by_id: dict[str, SampleScore] = {}
    for score in scores:
        if score.sample_id in by_id:
            raise AlignmentError(f"duplicate score for sample {score.sample_id!r}")
        by_id[score.sample_id] = score
    sample_ids = {s.sample_id for s in samples}
    if len(sample_ids) != len(samples):
        raise AlignmentError("duplicate sample_id among samples")
    if sample_ids != set(by_id):
        missing = sample_ids ^ set(by_id)
        raise AlignmentError(f"scores and samples do not align; mismatched ids: {sorted(missing)[:5]}")

    per_category: list[CategoryMetrics] = []
    for cat in CATEGORY_ORDER:
        cat_scores = [by_id[s.sample_id] for s in samples if s.category is cat]
        n_valid = sum(1 for sc in cat_scores if sc.valid)
        if n_valid == 0:
            mean_iou = mean_dice = None
        else:
            # Invalid outputs stay in the denominator at 0.
            mean_iou = sum(sc.iou for sc in cat_scores) / len(cat_scores)
            mean_dice = sum(sc.dice for sc in cat_scores) / len(cat_scores)
        per_category.append(
            CategoryMetrics(
                category=cat,
                n_samples=len(cat_scores),
                n_valid=n_valid,
                mean_iou=mean_iou,
                mean_dice=mean_dice,
            )
        )

    total = len(samples)
    w_iou = sum(sc.iou for sc in scores) / total if total else 0.0
    w_dice = sum(sc.dice for sc in scores) / total if total else 0.0
    return EvalReport(
        per_category=tuple(per_category),
        macro_iou=macro_mean(m.mean_iou for m in per_category),
        macro_dice=macro_mean(m.mean_dice for m in per_category),
        w_iou=w_iou,
        w_dice=w_dice,
        total_samples=total,
    )


def format_score(value) -> str:
    """Render a metric to 3 decimals with half-up rounding; None as "-"."""
    if value is None:
        return "-"
    return str(Decimal(str(value)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def _report_rows(report: EvalReport) -> tuple[list[str], list[list[str]]]:
    header = ["metric", *(c.value for c in CATEGORY_ORDER), "mean", "weighted"]
    iou_row = [
        "IoU",
        *(format_score(m.mean_iou) for m in report.per_category),
        format_score(report.macro_iou),
        format_score(report.w_iou),
    ]
    dice_row = [
        "Dice",
        *(format_score(m.mean_dice) for m in report.per_category),
        format_score(report.macro_dice),
        format_score(report.w_dice),
    ]
    return header, [iou_row, dice_row]


def emit_report(report: EvalReport, fmt: str = "md") -> str:
    """Render the report as CSV or Markdown ("csv" / "md").

    Both formats share one numeric formatter, so their cells are
    identical strings.
    """
    header, rows = _report_rows(report)
    if fmt == "csv":
        def csv_cell(cell: str) -> str:
            return f'"{cell}"' if "," in cell else cell

        lines = [",".join(csv_cell(c) for c in header)]
        lines += [",".join(csv_cell(c) for c in row) for row in rows]
        return "\n".join(lines) + "\n"
    if fmt == "md":
        lines = ["| " + " | ".join(header) + " |"]
        lines.append("|" + "---|" * len(header))
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def render_overlay(sample: GroundingSample, predicted: PixelBox | None = None) -> str:
    """Build a standalone SVG overlay for one sample.

    The document has the image's dimensions and references the image by
    path rather than embedding it. The ground-truth box is stroked white;
    the predicted box, when present, gray.
    """
    w, h = sample.image_width, sample.image_height

    def rect(box: PixelBox, stroke: str) -> str:
        return (
            f'  <rect x="{box.x_left!r}" y="{box.y_top!r}" '
            f'width="{box.x_right - box.x_left!r}" '
            f'height="{box.y_bottom - box.y_top!r}" '
            f'fill="none" stroke="{stroke}" stroke-width="2"/>'
        )

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'  <image href={quoteattr(sample.image_ref)} x="0" y="0" '
        f'width="{w}" height="{h}"/>',
        rect(sample.gt_box, "white"),
    ]
    if predicted is not None:
        lines.append(rect(predicted, "gray"))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def iter_predictions(path: str | Path) -> Iterator[tuple[str, str]]:
    """Stream (sample_id, raw_text) pairs from a predictions JSONL file."""
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON: {exc.msg}") from None
            if (
                not isinstance(record, dict)
                or not isinstance(record.get("sample_id"), str)
                or not isinstance(record.get("raw_text"), str)
            ):
                raise ValueError(
                    f"line {line_no}: prediction records need string "
                    "sample_id and raw_text"
                )
            if record["sample_id"] in seen:
                raise ValueError(
                    f"line {line_no}: duplicate prediction for {record['sample_id']!r}"
                )
            seen.add(record["sample_id"])
            yield record["sample_id"], record["raw_text"]


def load_predictions(path: str | Path) -> dict[str, str]:
    """Load a predictions file into a sample_id -> raw_text mapping."""
    return dict(iter_predictions(path))


def evaluate_files(manifest_samples: Iterable[GroundingSample], predictions: Mapping[str, str]) -> EvalReport:
    """Score every sample against its prediction text and aggregate."""
    samples = list(manifest_samples)
    scores = []
    for s in samples:
        if s.sample_id not in predictions:
            raise AlignmentError(f"no prediction for sample {s.sample_id!r}")
        scores.append(score_sample(s, predictions[s.sample_id]))
    if len(predictions) != len(samples):
        extra = set(predictions) - {s.sample_id for s in samples}
        raise AlignmentError(f"predictions for unknown samples: {sorted(extra)[:5]}")
    return aggregate(scores, samples)


# Reference rows for baseline grounding models on the MS-CXR benchmark,
# kept for comparison tables. Values are per-category means in
# CATEGORY_ORDER; GPT-4v reports only an overall mean.
BASELINE_IOU: dict[str, dict] = {
    "MSLL": {
        "per_category": (0.425, 0.106, 0.386, 0.388, 0.294, 0.33, 0.325, 0.368),
        "mean": 0.328,
        "weighted": 0.308,
    },
    "MedKLIP": {
        "per_category": (0.297, 0.091, 0.265, 0.323, 0.327, 0.395, 0.197, 0.216),
        "mean": 0.264,
        "weighted": 0.267,
    },
    "Biovil": {
        "per_category": (0.328, 0.137, 0.297, 0.275, 0.213, 0.406, 0.188, 0.224),
        "mean": 0.259,
        "weighted": 0.281,
    },
    "Gloria": {
        "per_category": (0.29, 0.116, 0.304, 0.303, 0.201, 0.408, 0.197, 0.33),
        "mean": 0.269,
        "weighted": 0.282,
    },
    "GPT-4v": {"per_category": None, "mean": 0.0833, "weighted": None},
}

BASELINE_DICE: dict[str, dict] = {
    "MSLL": {
        "per_category": (0.576, 0.163, 0.538, 0.538, 0.433, 0.485, 0.468, 0.525),
        "mean": 0.466,
        "weighted": 0.44,
    },
    "MedKLIP": {
        "per_category": (0.443, 0.151, 0.401, 0.476, 0.476, 0.559, 0.307, 0.344),
        "mean": 0.395,
        "weighted": 0.396,
    },
    "Biovil": {
        "per_category": (0.472, 0.217, 0.433, 0.405, 0.326, 0.56, 0.294, 0.352),
        "mean": 0.382,
        "weighted": 0.408,
    },
    "Gloria": {
        "per_category": (0.417, 0.181, 0.443, 0.442, 0.315, 0.567, 0.298, 0.476),
        "mean": 0.392,
        "weighted": 0.407,
    },
}
