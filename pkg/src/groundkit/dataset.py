"""Manifest ingestion, category taxonomy, and patient-disjoint splitting.

Manifests are JSON lines, one grounding record per line:

    {"sample_id": "...", "patient_id": "...", "image_ref": "...",
     "image_width": 448, "image_height": 448, "category": "Pneumonia",
     "phrase": "...", "gt_box": [x_left, y_top, x_right, y_bottom]}

Real chest X-ray benchmarks are not redistributed here; a synthetic
generator produces schema-identical fixtures for tests and demos.
"""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .geometry import PixelBox


class Category(enum.Enum):
    """The eight disease categories, in fixed report-column order."""

    PNEUMONIA = "Pneumonia"
    PNEUMOTHORAX = "Pneumothorax"
    CONSOLIDATION = "Consolidation"
    ATELECTASIS = "Atelectasis"
    EDEMA = "Edema"
    CARDIOMEGALY = "Cardiomegaly"
    LUNG_OPACITY = "Lung Opacity"
    PLEURAL_EFFUSION = "Pleural Effusion"

    @classmethod
    def from_string(cls, text: str) -> "Category":
        """Resolve a category name, ignoring spaces and letter case."""
        key = text.replace(" ", "").lower()
        for cat in cls:
            if cat.value.replace(" ", "").lower() == key:
                return cat
        raise ValueError(f"unknown category {text!r}")


CATEGORY_ORDER: tuple[Category, ...] = tuple(Category)


class ManifestError(ValueError):
    """A manifest record failed validation; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class SchemaError(ManifestError):
    pass


class DuplicateIdError(ManifestError):
    pass


class BoxOutOfBoundsError(ManifestError):
    pass


@dataclass(frozen=True)
class GroundingSample:
    """One grounding record: an image, a phrase, and its expert box."""

    sample_id: str
    patient_id: str
    image_ref: str
    image_width: int
    image_height: int
    category: Category
    phrase: str
    gt_box: PixelBox

    def __post_init__(self) -> None:
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError(
                f"image dimensions must be positive, got "
                f"{self.image_width}x{self.image_height}"
            )
        if not self.phrase:
            raise ValueError("phrase must be non-empty")
        if (
            self.gt_box.x_right > self.image_width
            or self.gt_box.y_bottom > self.image_height
        ):
            raise ValueError(
                f"gt_box {self.gt_box.as_tuple()} exceeds image bounds "
                f"{self.image_width}x{self.image_height}"
            )


_REQUIRED_KEYS = (
    "sample_id",
    "patient_id",
    "image_ref",
    "image_width",
    "image_height",
    "category",
    "phrase",
    "gt_box",
)


def sample_from_record(record: Mapping, line: int | None = None) -> GroundingSample:
    """Validate one manifest record (already decoded from JSON)."""
    for key in _REQUIRED_KEYS:
        if key not in record:
            raise SchemaError(f"missing key {key!r}", line)
    for key in ("sample_id", "patient_id", "image_ref", "phrase"):
        if not isinstance(record[key], str):
            raise SchemaError(f"{key} must be a string", line)
    for key in ("image_width", "image_height"):
        value = record[key]
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaError(f"{key} must be an integer", line)
        if value <= 0:
            raise SchemaError(f"{key} must be positive, got {value}", line)
    raw_box = record["gt_box"]
    if (
        not isinstance(raw_box, (list, tuple))
        or len(raw_box) != 4
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw_box)
        or not all(math.isfinite(float(v)) for v in raw_box)
    ):
        raise SchemaError("gt_box must be an array of 4 finite numbers", line)
    try:
        category = Category.from_string(record["category"])
    except (ValueError, AttributeError):
        raise SchemaError(f"unknown category {record['category']!r}", line) from None
    x_left, y_top, x_right, y_bottom = (float(v) for v in raw_box)
    if min(x_left, y_top, x_right, y_bottom) < 0:
        raise BoxOutOfBoundsError(f"gt_box {raw_box} has negative coordinates", line)
    if x_left > x_right or y_top > y_bottom:
        raise SchemaError(f"gt_box {raw_box} corners are not ordered", line)
    if x_right > record["image_width"] or y_bottom > record["image_height"]:
        raise BoxOutOfBoundsError(
            f"gt_box {raw_box} exceeds image bounds "
            f"{record['image_width']}x{record['image_height']}",
            line,
        )
    if not record["phrase"]:
        raise SchemaError("phrase must be non-empty", line)
    return GroundingSample(
        sample_id=record["sample_id"],
        patient_id=record["patient_id"],
        image_ref=record["image_ref"],
        image_width=record["image_width"],
        image_height=record["image_height"],
        category=category,
        phrase=record["phrase"],
        gt_box=PixelBox(x_left, y_top, x_right, y_bottom),
    )


def iter_manifest(path: str | Path) -> Iterator[GroundingSample]:
    """Stream validated samples from a JSON-lines manifest, in file order."""
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from None
            if not isinstance(record, dict):
                raise SchemaError("record must be a JSON object", line_no)
            sample = sample_from_record(record, line_no)
            if sample.sample_id in seen:
                raise DuplicateIdError(
                    f"duplicate sample_id {sample.sample_id!r}", line_no
                )
            seen.add(sample.sample_id)
            yield sample


def load_manifest(path: str | Path) -> list[GroundingSample]:
    """Load and validate a whole manifest."""
    return list(iter_manifest(path))


def write_manifest(samples: Iterable[GroundingSample], path: str | Path) -> None:
    """Write samples as a JSON-lines manifest."""
    with open(path, "w", encoding="utf-8") as handle:
        for s in samples:
            record = {
                "sample_id": s.sample_id,
                "patient_id": s.patient_id,
                "image_ref": s.image_ref,
                "image_width": s.image_width,
                "image_height": s.image_height,
                "category": s.category.value,
                "phrase": s.phrase,
                "gt_box": list(s.gt_box.as_tuple()),
            }
            handle.write(json.dumps(record) + "\n")


class Split(enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class TooFewPatientsError(ValueError):
    """Fewer than three distinct patients; a 3-way split is meaningless."""


@dataclass(frozen=True)
class SplitAssignment:
    """Patient-disjoint assignment of every sample to train/val/test."""

    assignment: Mapping[str, Split]
    seed: int
    patient_counts: tuple[int, int, int]
    warnings: tuple[str, ...] = ()


def split_by_patient(
    samples: Iterable[GroundingSample],
    ratios: tuple[int, int, int] = (7, 1, 2),
    seed: int = 0,
) -> SplitAssignment:
    """Split samples into train/val/test with patient-level disjointness.

    Distinct patient ids are sorted, shuffled by a seeded PRNG, and cut by
    the ratios with floor allocation: floor(P * r_train / total) patients
    to train, floor(P * r_val / total) to val, the remainder to test, so
    test is never starved. Sorting first makes the result a pure function
    of the patient-id set and the seed, independent of record order.

    Raises:
        TooFewPatientsError: with fewer than 3 distinct patients.
        ValueError: on non-positive ratios.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {ratios}")
    samples = list(samples)
    patients = sorted({s.patient_id for s in samples})
    n_patients = len(patients)
    if n_patients < 3:
        raise TooFewPatientsError(
            f"need at least 3 distinct patients, got {n_patients}"
        )

    random.Random(seed).shuffle(patients)
    total = sum(ratios)
    n_train = n_patients * ratios[0] // total
    n_val = n_patients * ratios[1] // total
    n_test = n_patients - n_train - n_val

    split_of_patient: dict[str, Split] = {}
    for i, patient in enumerate(patients):
        if i < n_train:
            split_of_patient[patient] = Split.TRAIN
        elif i < n_train + n_val:
            split_of_patient[patient] = Split.VAL
        else:
            split_of_patient[patient] = Split.TEST

    warnings = tuple(
        f"{split.value} split has no patients"
        for split, count in zip(Split, (n_train, n_val, n_test))
        if count == 0
    )
    assignment = {s.sample_id: split_of_patient[s.patient_id] for s in samples}
    return SplitAssignment(
        assignment=assignment,
        seed=seed,
        patient_counts=(n_train, n_val, n_test),
        warnings=warnings,
    )


def write_split(
    assignment: SplitAssignment,
    samples: Iterable[GroundingSample],
    path: str | Path,
) -> None:
    """Write the split as JSON lines (sample_id, split) in sample order."""
    with open(path, "w", encoding="utf-8") as handle:
        for s in samples:
            record = {
                "sample_id": s.sample_id,
                "split": assignment.assignment[s.sample_id].value,
            }
            handle.write(json.dumps(record) + "\n")


def category_counts(samples: Iterable[GroundingSample]) -> dict[Category, int]:
    """Sample count per category; categories absent from the input map to 0."""
    counts = {cat: 0 for cat in CATEGORY_ORDER}
    for s in samples:
        counts[s.category] += 1
    return counts


def synthetic_manifest(
    per_category: int = 8,
    seed: int = 42,
    dims: tuple[tuple[int, int], ...] = ((400, 400), (800, 600), (1000, 500)),
    grid_aligned: bool = True,
    samples_per_patient: int = 2,
) -> list[GroundingSample]:
    """Generate a schema-identical synthetic manifest for tests and demos.

    With ``grid_aligned`` true, every dimension must be a multiple of 100
    and boxes land exactly on the quantization grid, so a perfect mock
    prediction round-trips losslessly. Deterministic for a given seed.
    """
    if grid_aligned and any(w % 100 or h % 100 for w, h in dims):
        raise ValueError("grid-aligned manifests need dimensions divisible by 100")
    rng = random.Random(seed)
    samples: list[GroundingSample] = []
    index = 0
    for cat in CATEGORY_ORDER:
        for _ in range(per_category):
            width, height = dims[index % len(dims)]
            if grid_aligned:
                qx1 = rng.randrange(0, 80)
                qy1 = rng.randrange(0, 80)
                qx2 = rng.randrange(qx1 + 10, 101)
                qy2 = rng.randrange(qy1 + 10, 101)
                box = PixelBox(
                    qx1 * width / 100,
                    qy1 * height / 100,
                    qx2 * width / 100,
                    qy2 * height / 100,
                )
            else:
                x1 = rng.uniform(0, width * 0.8)
                y1 = rng.uniform(0, height * 0.8)
                x2 = rng.uniform(x1 + 1, width)
                y2 = rng.uniform(y1 + 1, height)
                box = PixelBox(x1, y1, x2, y2)
            patient = f"patient-{index // samples_per_patient:04d}"
            samples.append(
                GroundingSample(
                    sample_id=f"sample-{index:04d}",
                    patient_id=patient,
                    image_ref=f"images/{patient}/img-{index:04d}.png",
                    image_width=width,
                    image_height=height,
                    category=cat,
                    phrase=f"synthetic {cat.value.lower()} finding {index}",
                    gt_box=box,
                )
            )
            index += 1
    return samples
