"""Deterministic stand-in for the grounding model.

Emits response text for manifest samples under configurable fidelity
profiles so the parser and evaluation pipeline can be exercised end to
end: Perfect echoes the quantized ground truth, Jitter perturbs it in
quantized units, and Malformed reproduces the failure regimes where a
model emits no usable box.
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .codec import COORD_MAX, NormBox, encode, quantize
from .dataset import GroundingSample

_PROSE_TEMPLATES = (
    "The finding is located at {box} in this image.",
    "Identified region: {box}.",
    "Based on the description, the area of interest is {box}.",
    "{box} marks the described region.",
)


class ProfileKind(enum.Enum):
    PERFECT = "perfect"
    JITTER = "jitter"
    MALFORMED = "malformed"


class MalformedMode(enum.Enum):
    NO_BOX = "no-box"
    OUT_OF_RANGE = "out-of-range"
    SWAPPED_CORNERS = "swapped-corners"
    TRUNCATED_BRACES = "truncated-braces"
    PROSE_WRAPPED = "prose-wrapped"


@dataclass(frozen=True)
class GrounderProfile:
    """Fidelity profile controlling what the mock model emits."""

    kind: ProfileKind
    max_offset_units: int = 0
    mode: MalformedMode | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind is ProfileKind.JITTER and not 0 <= self.max_offset_units <= COORD_MAX:
            raise ValueError(
                f"jitter offset must be in [0, {COORD_MAX}], got {self.max_offset_units}"
            )
        if self.kind is ProfileKind.MALFORMED and self.mode is None:
            raise ValueError("malformed profile needs a mode")
        if self.kind is not ProfileKind.MALFORMED and self.mode is not None:
            raise ValueError(f"{self.kind.value} profile does not take a mode")

    @classmethod
    def perfect(cls, seed: int = 0) -> "GrounderProfile":
        return cls(kind=ProfileKind.PERFECT, seed=seed)

    @classmethod
    def jitter(cls, max_offset_units: int, seed: int = 0) -> "GrounderProfile":
        return cls(kind=ProfileKind.JITTER, max_offset_units=max_offset_units, seed=seed)

    @classmethod
    def malformed(cls, mode: MalformedMode, seed: int = 0) -> "GrounderProfile":
        return cls(kind=ProfileKind.MALFORMED, mode=mode, seed=seed)

    @classmethod
    def from_string(cls, text: str, seed: int = 0) -> "GrounderProfile":
        """Parse CLI profile syntax: perfect | jitter:N | malformed:MODE."""
        head, _, arg = text.partition(":")
        if head == "perfect" and not arg:
            return cls.perfect(seed=seed)
        if head == "jitter":
            try:
                return cls.jitter(int(arg), seed=seed)
            except ValueError:
                raise ValueError(f"bad jitter profile {text!r}; want jitter:N") from None
        if head == "malformed":
            try:
                mode = MalformedMode(arg)
            except ValueError:
                options = ", ".join(m.value for m in MalformedMode)
                raise ValueError(
                    f"bad malformed mode {arg!r}; options: {options}"
                ) from None
            return cls.malformed(mode, seed=seed)
        raise ValueError(f"unknown profile {text!r}")


def _rng_for(profile: GrounderProfile, sample: GroundingSample) -> random.Random:
    # Keyed by (profile seed, sample id) so every sample gets a stable,
    # independent stream regardless of iteration order.
    digest = hashlib.sha256(f"{profile.seed}:{sample.sample_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _jittered(nb: NormBox, max_offset: int, rng: random.Random) -> NormBox:
    coords = [
        max(0, min(COORD_MAX, c + rng.randint(-max_offset, max_offset)))
        for c in nb.as_tuple()
    ]
    # Corner repair keeps jitter outputs always parseable; validity rates
    # are controlled solely by malformed profiles.
    if coords[0] > coords[2]:
        coords[0], coords[2] = coords[2], coords[0]
    if coords[1] > coords[3]:
        coords[1], coords[3] = coords[3], coords[1]
    return NormBox(*coords)


def _swapped_corners_text(nb: NormBox) -> str:
    qx1, qy1, qx2, qy2 = nb.as_tuple()
    if qx1 < qx2:
        qx1, qx2 = qx2, qx1
    elif qy1 < qy2:
        qy1, qy2 = qy2, qy1
    elif qx1 < COORD_MAX:
        # Degenerate point box: manufacture an inverted x pair.
        qx1, qx2 = qx1 + 1, qx1
    else:
        qx2 = qx1 - 1
    return f"{{<{qx1}><{qy1}><{qx2}><{qy2}>}}"


def respond(sample: GroundingSample, profile: GrounderProfile) -> str:
    """Emit deterministic response text for one sample under a profile."""
    nb = quantize(sample.gt_box, sample.image_width, sample.image_height)
    rng = _rng_for(profile, sample)

    if profile.kind is ProfileKind.PERFECT:
        return encode(nb)

    if profile.kind is ProfileKind.JITTER:
        box_text = encode(_jittered(nb, profile.max_offset_units, rng))
        template = rng.choice(_PROSE_TEMPLATES)
        return template.format(box=box_text)

    mode = profile.mode
    if mode is MalformedMode.NO_BOX:
        return "No definite region can be localized in this study."
    if mode is MalformedMode.OUT_OF_RANGE:
        qx1, qy1, qx2, qy2 = nb.as_tuple()
        return f"{{<{qx1}><{qy1}><{qx2 + COORD_MAX + 1}><{qy2}>}}"
    if mode is MalformedMode.SWAPPED_CORNERS:
        return _swapped_corners_text(nb)
    if mode is MalformedMode.TRUNCATED_BRACES:
        return encode(nb)[:-1]
    if mode is MalformedMode.PROSE_WRAPPED:
        template = rng.choice(_PROSE_TEMPLATES)
        return template.format(box=encode(nb))
    raise AssertionError(f"unhandled malformed mode {mode}")


def predictions(
    samples: Iterable[GroundingSample], profile: GrounderProfile
) -> Iterator[dict[str, str]]:
    """Prediction records ({sample_id, raw_text}) for a manifest."""
    for sample in samples:
        yield {"sample_id": sample.sample_id, "raw_text": respond(sample, profile)}


def write_predictions(
    samples: Iterable[GroundingSample],
    profile: GrounderProfile,
    path: str | Path,
) -> None:
    """Write mock predictions as the JSONL format the evaluator consumes."""
    with open(path, "w", encoding="utf-8") as handle:
        for record in predictions(samples, profile):
            handle.write(json.dumps(record) + "\n")
