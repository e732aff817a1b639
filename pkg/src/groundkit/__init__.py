"""Toolkit for phrase grounding on chest X-rays.

Everything deterministic around a grounding model: the quantized box
text codec and its inverse, two-stage instruction templates, patient-
disjoint dataset splitting, IoU/Dice evaluation with fixed-category
aggregation, desk-scale adapter numerics, and a mock grounder to drive
the pipeline end to end.
"""

from .adapter import (
    CosineSchedule,
    IndivisibleError,
    LoraLinear,
    ShapeError,
    StepOutOfRangeError,
    cosine_lr,
    grad_check,
    lora_forward,
    lora_merge,
    merge_tokens,
    planted_targets,
    project,
    toy_train,
)
from .codec import (
    BoundsError,
    DimensionError,
    NormBox,
    ParseFailure,
    ParseOutcome,
    dequantize,
    encode,
    parse,
    quantize,
)
from .dataset import (
    CATEGORY_ORDER,
    BoxOutOfBoundsError,
    Category,
    DuplicateIdError,
    GroundingSample,
    ManifestError,
    SchemaError,
    Split,
    SplitAssignment,
    TooFewPatientsError,
    category_counts,
    iter_manifest,
    load_manifest,
    split_by_patient,
    synthetic_manifest,
    write_manifest,
    write_split,
)
from .evaluation import (
    AlignmentError,
    CategoryMetrics,
    EvalReport,
    SampleScore,
    aggregate,
    emit_report,
    evaluate_files,
    format_score,
    load_predictions,
    macro_mean,
    render_overlay,
    score_sample,
)
from .geometry import PixelBox, area, dice, intersection_area, iou
from .mock_grounder import GrounderProfile, MalformedMode, ProfileKind, respond
from .prompts import (
    EmptyLabelError,
    EmptyPoolError,
    InstructionPool,
    RenderedPrompt,
    Task,
    render_stage1,
    render_stage2,
    render_stage2_target,
)

__version__ = "0.1.0"
