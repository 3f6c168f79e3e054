"""Dense tensor core: storage conventions and the primitives layers build on.

A tensor is a C-contiguous numpy array. Images and feature maps are laid
out H x W x C row-major; batches prepend a leading axis. Storage precision
is float32; float64 is the verification mode used by the finite-difference
gradient harness, and every op in the package follows the dtype of its
inputs so a whole model can be run in either precision.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

STORAGE_DTYPE = np.dtype(np.float32)
VERIFY_DTYPE = np.dtype(np.float64)

# The package's tensor value type is a plain numpy array; this alias marks
# signatures that traffic in H x W x C / B x H x W x C data.
Tensor = np.ndarray


@dataclass(frozen=True)
class Shape4:
    """Spatial shape of an image tensor, optionally batched."""

    height: int
    width: int
    channels: int
    batch: int | None = None

    def __post_init__(self):
        dims = [self.height, self.width, self.channels]
        if self.batch is not None:
            dims.append(self.batch)
        if any(int(d) < 1 for d in dims):
            raise ShapeError(f"Shape4 dimensions must be >= 1, got {self}")

    @property
    def hwc(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


def as_tensor(values, dtype=STORAGE_DTYPE) -> np.ndarray:
    """Materialize values as a contiguous row-major tensor."""
    return np.ascontiguousarray(values, dtype=dtype)


def check_finite(t: np.ndarray, op: str) -> np.ndarray:
    """Reject NaN/Inf results; public ops funnel their outputs through here."""
    if not np.all(np.isfinite(t)):
        bad = int(t.size - np.count_nonzero(np.isfinite(t)))
        raise NumericError(f"{op} produced {bad} non-finite element(s)")
    return t


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two rank-2 tensors, accumulated in their dtype."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def map_elementwise(t: np.ndarray, f) -> np.ndarray:
    """Apply a scalar function to every element, preserving shape and dtype.

    Accepts both numpy-vectorized callables and plain scalar functions.
    """
    t = np.asarray(t)
    try:
        out = np.asarray(f(t), dtype=t.dtype)
        if out.shape != t.shape:
            raise TypeError
    except (TypeError, ValueError):
        out = np.vectorize(f, otypes=[t.dtype])(t)
    return check_finite(out, "map_elementwise")
