"""Dense tensor values and their algebra: mode products, Tucker products,
matricization, inner products, and the array norm.

Conventions, fixed once and tested:
  * modes are 1-based: 1 <= k <= order
  * flat storage is row-major (last index varies fastest)
  * matricize(T, k) enumerates the fixed indices of each mode-k fiber in the
    same last-index-fastest order, so column c holds the fiber whose fixed
    multi-index is the c-th in that enumeration
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

# Largest element count the flat buffer may hold on this platform.
_MAX_ELEMENTS = np.iinfo(np.intp).max


@dataclass(frozen=True)
class Shape:
    """Ordered dimensions (b_1, ..., b_p), p >= 1, every b_k >= 1."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 1:
            raise ShapeError("tensor order must be at least 1")
        if any(d < 1 for d in dims):
            raise ShapeError(f"dimensions must be positive, got {dims}")
        total = 1
        for d in dims:
            total *= d
        if total > _MAX_ELEMENTS:
            raise ShapeError(f"element count {total} exceeds addressable range")
        object.__setattr__(self, "_size", total)

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return self._size  # type: ignore[attr-defined]


class Tensor:
    """Immutable dense tensor of float64 scalars.

    Vectors and matrices are order-1/2 tensors. Construction validates
    shape and finiteness eagerly; there is no broadcasting and no
    mutation API.
    """

    __slots__ = ("shape", "_arr")

    def __init__(self, data, shape: Shape | tuple[int, ...] | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if shape is None:
            if arr.ndim == 0:
                raise ShapeError("order-0 data needs an explicit shape")
            shape = Shape(arr.shape)
        else:
            if not isinstance(shape, Shape):
                shape = Shape(tuple(shape))
            if arr.size != shape.size:
                raise ShapeError(
                    f"data length {arr.size} != shape element count {shape.size}"
                )
            # Flat data is interpreted last-index-fastest (C order).
            arr = arr.reshape(shape.dims)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        # Fresh owned buffer: the value never aliases caller memory.
        arr = np.array(arr, dtype=np.float64, order="C", copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "_arr", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view of the entries."""
        return self._arr

    @property
    def dims(self) -> tuple[int, ...]:
        return self.shape.dims

    @property
    def order(self) -> int:
        return self.shape.order

    @property
    def size(self) -> int:
        return self.shape.size

    def __getitem__(self, idx):
        return self._arr[idx]

    def __repr__(self):
        return f"Tensor(shape={self.dims})"

    # Value sugar over the elementwise operations.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__


def zeros(shape) -> Tensor:
    if not isinstance(shape, Shape):
        shape = Shape(tuple(shape))
    return Tensor(np.zeros(shape.dims))


def from_array(arr) -> Tensor:
    return Tensor(arr)


@dataclass(frozen=True)
class MatrixList:
    """Matrices to apply mode-by-mode, starting at `first_mode`.

    matrices[j] multiplies mode first_mode + j. Conformability against a
    concrete tensor is checked where the list is used.
    """

    matrices: tuple[Tensor, ...]
    first_mode: int = 1

    def __post_init__(self):
        object.__setattr__(self, "matrices", tuple(self.matrices))
        if self.first_mode < 1:
            raise ShapeError("first_mode must be >= 1")
        for m in self.matrices:
            if not isinstance(m, Tensor) or m.order != 2:
                raise ShapeError("MatrixList entries must be order-2 tensors")

    @property
    def modes(self) -> tuple[int, ...]:
        return tuple(range(self.first_mode, self.first_mode + len(self.matrices)))

    def __len__(self):
        return len(self.matrices)


def _check_mode(t: Tensor, k: int):
    if not 1 <= k <= t.order:
        raise ShapeError(f"mode {k} out of range for order-{t.order} tensor")


def matricize(t: Tensor, k: int) -> Tensor:
    """Unfold t along mode k: a b_k x (prod of the other dims) matrix whose
    columns are the mode-k fibers, fixed indices enumerated last-fastest."""
    _check_mode(t, k)
    b_k = t.dims[k - 1]
    rest = t.size // b_k
    mat = np.moveaxis(t.array, k - 1, 0).reshape(b_k, rest)
    return Tensor(mat)


def dematricize(m: Tensor, shape: Shape | tuple[int, ...], k: int) -> Tensor:
    """Inverse of matricize at the same mode."""
    if not isinstance(shape, Shape):
        shape = Shape(tuple(shape))
    if not 1 <= k <= shape.order:
        raise ShapeError(f"mode {k} out of range for order-{shape.order} shape")
    if m.order != 2:
        raise ShapeError("dematricize expects an order-2 tensor")
    b_k = shape.dims[k - 1]
    rest = tuple(d for j, d in enumerate(shape.dims) if j != k - 1)
    if m.dims[0] != b_k or m.dims[1] != shape.size // b_k:
        raise ShapeError(f"matrix {m.dims} does not unfold shape {shape.dims} at mode {k}")
    arr = m.array.reshape((b_k,) + rest)
    return Tensor(np.moveaxis(arr, 0, k - 1))


def mode_product(t: Tensor, c: Tensor, k: int) -> Tensor:
    """Contract mode k of t against the columns of the matrix c (m x b_k):
    (t x_k c)[..., j, ...] = sum_i c[j, i] * t[..., i, ...]."""
    _check_mode(t, k)
    if c.order != 2:
        raise ShapeError("mode_product expects an order-2 matrix")
    if c.dims[1] != t.dims[k - 1]:
        raise ShapeError(
            f"matrix columns {c.dims[1]} != tensor mode-{k} size {t.dims[k - 1]}"
        )
    out = np.tensordot(c.array, t.array, axes=([1], [k - 1]))
    return Tensor(np.moveaxis(out, 0, k - 1))


def tucker_product(t: Tensor, ml: MatrixList) -> Tensor:
    """Sequential mode products of t against ml, one matrix per declared mode."""
    out = t
    for k, m in zip(ml.modes, ml.matrices):
        out = mode_product(out, m, k)
    return out


def inner_product(w: Tensor, v: Tensor) -> float:
    """Sum of products of same-index elements."""
    if w.dims != v.dims:
        raise ShapeError(f"shape mismatch {w.dims} vs {v.dims}")
    return float(np.dot(w.array.ravel(), v.array.ravel()))


def array_norm_sq(t: Tensor) -> float:
    """Squared array norm, equal to inner_product(t, t)."""
    flat = t.array.ravel()
    return float(np.dot(flat, flat))


def add(t: Tensor, v: Tensor) -> Tensor:
    if t.dims != v.dims:
        raise ShapeError(f"shape mismatch {t.dims} vs {v.dims}")
    return Tensor(t.array + v.array)


def sub(t: Tensor, v: Tensor) -> Tensor:
    if t.dims != v.dims:
        raise ShapeError(f"shape mismatch {t.dims} vs {v.dims}")
    return Tensor(t.array - v.array)


def scale(t: Tensor, c) -> Tensor:
    c = float(c)
    return Tensor(t.array * c)


def elementwise(t: Tensor, v, op: str) -> Tensor:
    """Entrywise arithmetic: op in {"add", "sub", "scale-by-scalar"}."""
    if op == "add":
        return add(t, v)
    if op == "sub":
        return sub(t, v)
    if op == "scale-by-scalar":
        return scale(t, v)
    raise ValueError(f"unknown elementwise op {op!r}")
