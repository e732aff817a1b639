"""Deterministic rendering of the two-stage multimodal instruction strings.

Stage 1 (captioning) and stage 2 (phrase grounding) prompts share one
skeleton: ``[INST]<Img><ImageFeature></Img>`` + task identifier +
instruction (+ label text for stage 2) + ``[/INST]``. The image sentinel
is a literal placeholder; embedding injection belongs to the training
system, not this library. Instructions are drawn uniformly from a pool
via a seed-keyed PRNG so a fixed seed always reproduces the same prompt.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .codec import NormBox, encode

IMAGE_SENTINEL = "<ImageFeature>"
CAPTION_IDENTIFIER = "[caption]"
REFER_IDENTIFIER = "[refer]"

# Markers that structure the prompt; instructions must not contain them,
# including the task identifiers, so every rendered string keeps exactly
# one of each.
RESERVED_MARKERS = (
    "[INST]",
    "[/INST]",
    "<Img>",
    "</Img>",
    CAPTION_IDENTIFIER,
    REFER_IDENTIFIER,
)


class Task(enum.Enum):
    CAPTION = "caption"
    REFER = "refer"


class EmptyPoolError(ValueError):
    """Instruction pool has no instructions."""


class EmptyLabelError(ValueError):
    """Stage-2 label text is empty."""


@dataclass(frozen=True)
class InstructionPool:
    """Ordered pool of interchangeable instruction phrasings for one task."""

    task: Task
    instructions: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.instructions) == 0:
            raise EmptyPoolError(f"{self.task.value} pool has no instructions")
        if len(set(self.instructions)) != len(self.instructions):
            raise ValueError(f"{self.task.value} pool contains duplicates")
        for text in self.instructions:
            if not text:
                raise ValueError("instructions must be non-empty")
            for marker in RESERVED_MARKERS:
                if marker in text:
                    raise ValueError(
                        f"instruction {text!r} contains reserved marker {marker!r}"
                    )

    def __len__(self) -> int:
        return len(self.instructions)

    @classmethod
    def load(cls, path: str | Path, task: Task) -> "InstructionPool":
        """Load a pool from a UTF-8 text file, one instruction per line.

        Lines starting with ``#`` are comments; blank lines are skipped.
        """
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        instructions = tuple(
            line.strip()
            for line in lines
            if line.strip() and not line.lstrip().startswith("#")
        )
        return cls(task=task, instructions=instructions)

    @classmethod
    def default(cls, task: Task) -> "InstructionPool":
        """The pool shipped with the package for the given task."""
        name = f"{task.value}_default.txt"
        text = resources.files("groundkit").joinpath("pools", name).read_text("utf-8")
        instructions = tuple(
            line.strip()
            for line in text.splitlines()
            if line.strip() and not line.lstrip().startswith("#")
        )
        return cls(task=task, instructions=instructions)


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    task_identifier: str
    instruction_used: str
    image_sentinel: str


def _pick_instruction(pool: InstructionPool, seed: int) -> str:
    # Seed-keyed draw rather than seed % len so adjacent seeds decorrelate.
    index = random.Random(seed).randrange(len(pool))
    return pool.instructions[index]


def render_stage1(pool: InstructionPool, seed: int) -> RenderedPrompt:
    """Render a captioning prompt from a caption-task pool."""
    if pool.task is not Task.CAPTION:
        raise ValueError(f"stage-1 rendering needs a caption pool, got {pool.task}")
    instruction = _pick_instruction(pool, seed)
    text = (
        f"[INST]<Img>{IMAGE_SENTINEL}</Img>{CAPTION_IDENTIFIER}{instruction}[/INST]"
    )
    return RenderedPrompt(
        text=text,
        task_identifier=CAPTION_IDENTIFIER,
        instruction_used=instruction,
        image_sentinel=IMAGE_SENTINEL,
    )


def render_stage2(pool: InstructionPool, label_text: str, seed: int) -> RenderedPrompt:
    """Render a grounding prompt; the label text completes the instruction."""
    if pool.task is not Task.REFER:
        raise ValueError(f"stage-2 rendering needs a refer pool, got {pool.task}")
    if not label_text:
        raise EmptyLabelError("stage-2 label text must be non-empty")
    instruction = _pick_instruction(pool, seed)
    text = (
        f"[INST]<Img>{IMAGE_SENTINEL}</Img>{REFER_IDENTIFIER}"
        f"{instruction} {label_text}[/INST]"
    )
    return RenderedPrompt(
        text=text,
        task_identifier=REFER_IDENTIFIER,
        instruction_used=instruction,
        image_sentinel=IMAGE_SENTINEL,
    )


def render_stage2_target(nb: NormBox) -> str:
    """The supervised target string for stage-2 fine-tuning: the box tokens."""
    return encode(nb)
