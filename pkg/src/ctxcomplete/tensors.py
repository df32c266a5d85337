"""Dense numeric kernels shared by every model component.

Matrices are C-contiguous (row-major) numpy arrays; 3-way tensors use the
same layout with the first axis outermost, so reshapes never move data.
float64 is used wherever gradients are finite-difference checked, float32
for training and checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Summation runs in numpy's fixed contraction order, so results are
    bit-reproducible for a given build.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def reshape3_to_mat(t: np.ndarray, target_rows: int, target_cols: int) -> np.ndarray:
    """Reinterpret a 3-way tensor as a matrix, preserving element order."""
    if t.ndim != 3:
        raise ShapeError(f"expected a 3-way tensor, got shape {t.shape}")
    if target_rows * target_cols != t.size:
        raise ShapeError(
            f"cannot reshape {t.shape} ({t.size} elements) to "
            f"{target_rows}x{target_cols}"
        )
    return np.ascontiguousarray(t).reshape(target_rows, target_cols)


@dataclass
class Rng:
    """Seeded PCG64 stream; the single source of randomness everywhere.

    Identical seeds give identical draws across runs and platforms. The
    generator state is serializable so training can resume mid-stream.
    """

    seed: int
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def get_state(self) -> dict:
        return self.generator.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.generator.bit_generator.state = state


def xavier_bound(fan_in: int, fan_out: int) -> float:
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fans must be positive, got ({fan_in}, {fan_out})")
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_uniform(
    rng: Rng,
    fan_in: int,
    fan_out: int,
    shape,
    dtype=np.float64,
    scale: float = 1.0,
) -> np.ndarray:
    """Uniform draw in [-s, s] with s = scale * sqrt(6 / (fan_in + fan_out))."""
    s = scale * xavier_bound(fan_in, fan_out)
    return rng.uniform(-s, s, shape).astype(dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
