"""Desk-scale numerics for the trainable adapter pieces.

Covers the parts of the architecture that train: 4:1 merging of
consecutive visual tokens, the linear projection into the language
model's embedding space, low-rank adapter layers with freeze/merge
semantics, the cosine learning-rate schedule, and a deterministic
full-batch trainer whose gradients are verified by central finite
differences. Everything runs in double precision; gradient checks are
meaningless at single precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are inconsistent."""


class IndivisibleError(ValueError):
    """Token count is not divisible by the merge group size."""

    def __init__(self, rows: int, group: int):
        self.rows = rows
        self.group = group
        super().__init__(f"{rows} tokens are not divisible by group size {group}")


class StepOutOfRangeError(ValueError):
    """Schedule step outside [0, total_steps]."""


def _as_matrix(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def merge_tokens(x: np.ndarray, group: int = 4) -> np.ndarray:
    """Concatenate every ``group`` consecutive token rows into one row.

    An (n, d) token matrix becomes (n/group, d*group), cutting the token
    count by the group factor. The row count must divide evenly; there is
    no padding mode, since silent padding would mask upstream bugs.
    """
    x = _as_matrix(x, "tokens")
    if group < 1:
        raise ValueError(f"group must be >= 1, got {group}")
    rows, cols = x.shape
    if rows % group != 0:
        raise IndivisibleError(rows, group)
    return np.ascontiguousarray(x).reshape(rows // group, cols * group)


def project(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine projection y = x W^T + b applied per token row."""
    x = _as_matrix(x, "tokens")
    weight = _as_matrix(weight, "weight")
    bias = np.asarray(bias, dtype=np.float64)
    if bias.ndim != 1:
        raise ShapeError(f"bias must be 1-D, got shape {bias.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"tokens have dim {x.shape[1]} but weight expects {weight.shape[1]}"
        )
    if bias.shape[0] != weight.shape[0]:
        raise ShapeError(
            f"bias has dim {bias.shape[0]} but weight outputs {weight.shape[0]}"
        )
    return x @ weight.T + bias


@dataclass
class LoraLinear:
    """A frozen base weight plus trainable low-rank factors.

    The effective weight is w0 + (alpha/rank) * b @ a. Only ``a`` and
    ``b`` ever train; ``w0`` is marked read-only so any attempt to write
    it raises.
    """

    w0: np.ndarray
    a: np.ndarray
    b: np.ndarray
    rank: int
    alpha: float

    def __post_init__(self) -> None:
        self.w0 = np.asarray(self.w0, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w0.ndim != 2 or self.a.ndim != 2 or self.b.ndim != 2:
            raise ShapeError("w0, a, b must all be 2-D")
        d_out, d_in = self.w0.shape
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.rank > min(d_out, d_in):
            raise ValueError(
                f"rank {self.rank} exceeds min(d_out, d_in) = {min(d_out, d_in)}"
            )
        if self.a.shape != (self.rank, d_in):
            raise ShapeError(f"a must be ({self.rank}, {d_in}), got {self.a.shape}")
        if self.b.shape != (d_out, self.rank):
            raise ShapeError(f"b must be ({d_out}, {self.rank}), got {self.b.shape}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        self.w0.flags.writeable = False

    @property
    def d_in(self) -> int:
        return self.w0.shape[1]

    @property
    def d_out(self) -> int:
        return self.w0.shape[0]

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    @property
    def trainable_parameters(self) -> int:
        return self.rank * (self.d_in + self.d_out)

    @classmethod
    def create(
        cls,
        d_in: int,
        d_out: int,
        rank: int,
        alpha: float,
        seed: int = 0,
        base: np.ndarray | None = None,
    ) -> "LoraLinear":
        """Standard initialization: a ~ N(0, 0.02), b = 0.

        With b zero the adapter contributes nothing, so a fresh layer
        reproduces the base projection exactly.
        """
        rng = np.random.default_rng(seed)
        if base is None:
            base = rng.normal(0.0, 1.0, (d_out, d_in))
        return cls(
            w0=np.array(base, dtype=np.float64),
            a=rng.normal(0.0, 0.02, (rank, d_in)),
            b=np.zeros((d_out, rank)),
            rank=rank,
            alpha=alpha,
        )


def lora_forward(x: np.ndarray, layer: LoraLinear) -> np.ndarray:
    """y = x w0^T + (alpha/rank) * x a^T b^T."""
    x = _as_matrix(x, "tokens")
    if x.shape[1] != layer.d_in:
        raise ShapeError(f"tokens have dim {x.shape[1]}, layer expects {layer.d_in}")
    return x @ layer.w0.T + layer.scaling * ((x @ layer.a.T) @ layer.b.T)


def lora_merge(layer: LoraLinear) -> np.ndarray:
    """The materialized effective weight w0 + (alpha/rank) * b @ a."""
    return layer.w0 + layer.scaling * (layer.b @ layer.a)


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine decay from lr_start to lr_end over total_steps."""

    lr_start: float
    lr_end: float
    total_steps: int

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not self.lr_end > 0:
            raise ValueError(f"lr_end must be > 0, got {self.lr_end}")
        if self.lr_start < self.lr_end:
            raise ValueError(
                f"lr_start ({self.lr_start}) must be >= lr_end ({self.lr_end})"
            )


def cosine_lr(schedule: CosineSchedule, step: int) -> float:
    """Learning rate at a step: end + (start-end)/2 * (1 + cos(pi*step/T))."""
    if not 0 <= step <= schedule.total_steps:
        raise StepOutOfRangeError(
            f"step {step} outside [0, {schedule.total_steps}]"
        )
    cosine = math.cos(math.pi * step / schedule.total_steps)
    return schedule.lr_end + 0.5 * (schedule.lr_start - schedule.lr_end) * (1.0 + cosine)


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all matrix entries."""
    if prediction.shape != target.shape:
        raise ShapeError(f"shape mismatch {prediction.shape} vs {target.shape}")
    diff = prediction - target
    return float(np.mean(diff * diff))


def lora_gradients(
    layer: LoraLinear, x: np.ndarray, y_target: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and analytic MSE gradients w.r.t. the low-rank factors.

    The base weight has no gradient by design: it is frozen.
    """
    x = _as_matrix(x, "batch")
    y_target = _as_matrix(y_target, "targets")
    if y_target.shape != (x.shape[0], layer.d_out):
        raise ShapeError(
            f"targets must be ({x.shape[0]}, {layer.d_out}), got {y_target.shape}"
        )
    prediction = lora_forward(x, layer)
    residual = prediction - y_target
    loss = float(np.mean(residual * residual))
    upstream = 2.0 * residual / residual.size
    grad_b = layer.scaling * (upstream.T @ (x @ layer.a.T))
    grad_a = layer.scaling * (layer.b.T @ upstream.T @ x)
    return loss, grad_a, grad_b


def grad_check(
    layer: LoraLinear,
    x: np.ndarray,
    y_target: np.ndarray,
    h: float = 1e-6,
) -> float:
    """Max relative error of analytic gradients vs central differences.

    Perturbs every entry of a and b by +/-h and compares the two-sided
    difference quotient against the analytic gradient. Returns the worst
    relative error over all entries (0 when both gradients vanish).
    """
    _, grad_a, grad_b = lora_gradients(layer, x, y_target)

    def loss_at() -> float:
        return mse_loss(lora_forward(x, layer), y_target)

    max_rel = 0.0
    for params, grads in ((layer.a, grad_a), (layer.b, grad_b)):
        for idx in np.ndindex(params.shape):
            original = params[idx]
            params[idx] = original + h
            loss_plus = loss_at()
            params[idx] = original - h
            loss_minus = loss_at()
            params[idx] = original
            fd = (loss_plus - loss_minus) / (2.0 * h)
            analytic = grads[idx]
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-12)
            max_rel = max(max_rel, rel)
    return max_rel


def planted_targets(
    layer: LoraLinear, x: np.ndarray, seed: int = 0, scale: float = 0.5
) -> np.ndarray:
    """Regression targets from a planted low-rank perturbation of the base.

    The teacher weight is w0 + (alpha/rank) * b* @ a* with seeded random
    factors, so the optimum is exactly reachable by the adapter.
    """
    rng = np.random.default_rng(seed)
    a_star = rng.normal(0.0, scale, layer.a.shape)
    b_star = rng.normal(0.0, scale, layer.b.shape)
    teacher = layer.w0 + layer.scaling * (b_star @ a_star)
    return _as_matrix(x, "batch") @ teacher.T


def toy_train(
    layer: LoraLinear,
    x: np.ndarray,
    y_target: np.ndarray,
    schedule: CosineSchedule,
    steps: int,
    seed: int = 0,
) -> list[float]:
    """Full-batch gradient descent on the low-rank factors only.

    The factors are re-initialized from the seed (a ~ N(0, 0.02), b = 0)
    before descending, so identical calls produce identical traces even
    on a previously trained layer. Returns steps+1 losses: the loss
    before each step plus the final loss. The frozen base is untouched.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if steps > schedule.total_steps:
        raise ValueError(
            f"steps ({steps}) exceeds schedule total_steps ({schedule.total_steps})"
        )
    rng = np.random.default_rng(seed)
    layer.a = rng.normal(0.0, 0.02, layer.a.shape)
    layer.b = np.zeros_like(layer.b)

    trace: list[float] = []
    for step in range(steps):
        loss, grad_a, grad_b = lora_gradients(layer, x, y_target)
        trace.append(loss)
        lr = cosine_lr(schedule, step)
        layer.a = layer.a - lr * grad_a
        layer.b = layer.b - lr * grad_b
    trace.append(mse_loss(lora_forward(x, layer), y_target))
    return trace
