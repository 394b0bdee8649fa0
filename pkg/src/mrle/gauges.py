"""Gauge regularizers: definite, positively homogeneous penalties u with
closed-form duals (the support value over the unit ball {u <= 1}) and, for
the convex variants, proximal maps for solver use.

Variants: entrywise-l1, weighted-l1, fiber-group-l2 (whole fibers along one
mode), slice-frobenius (whole slices along one mode), lq with q in (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UnsupportedGaugeError
from .tensors import Tensor, inner_product

VARIANTS = ("entrywise-l1", "weighted-l1", "fiber-group-l2", "slice-frobenius", "lq")

# Absorbs floating-point rounding; the inequality is exact in real arithmetic.
HOLDER_SLACK = 1e-9


@dataclass(frozen=True)
class GaugeSpec:
    """Descriptor of one regularizer u.

    weights: strictly positive Tensor, same shape as arguments (weighted-l1).
    mode: grouping mode for fiber-group-l2 / slice-frobenius (1-based).
    q: exponent for lq, q in (0, 1]; non-convex when q < 1.
    """

    variant: str
    weights: Tensor | None = None
    mode: int | None = None
    q: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown gauge variant {self.variant!r}")
        if self.variant == "weighted-l1":
            if not isinstance(self.weights, Tensor):
                raise ValueError("weighted-l1 requires a weights tensor")
            if not np.all(self.weights.array > 0.0):
                raise ValueError("weights must be strictly positive")
        elif self.weights is not None:
            raise ValueError(f"{self.variant} takes no weights")
        if self.variant in ("fiber-group-l2", "slice-frobenius"):
            if self.mode is None or int(self.mode) < 1:
                raise ValueError(f"{self.variant} requires a grouping mode >= 1")
            object.__setattr__(self, "mode", int(self.mode))
        elif self.mode is not None:
            raise ValueError(f"{self.variant} takes no grouping mode")
        if self.variant == "lq":
            if self.q is None or not 0.0 < float(self.q) <= 1.0:
                raise ValueError("lq requires q in (0, 1]")
            object.__setattr__(self, "q", float(self.q))
        elif self.q is not None:
            raise ValueError(f"{self.variant} takes no exponent")

    @property
    def convex(self) -> bool:
        return not (self.variant == "lq" and self.q < 1.0)


def _check_arg(g: GaugeSpec, m: Tensor):
    if g.variant == "weighted-l1" and g.weights.dims != m.dims:
        raise ShapeError(f"weights shape {g.weights.dims} != argument {m.dims}")
    if g.variant in ("fiber-group-l2", "slice-frobenius") and g.mode > m.order:
        raise ShapeError(f"grouping mode {g.mode} out of range for order {m.order}")


def _fiber_norms(a: np.ndarray, mode: int) -> np.ndarray:
    return np.sqrt((a * a).sum(axis=mode - 1))


def _slice_norms(a: np.ndarray, mode: int) -> np.ndarray:
    flat = np.moveaxis(a, mode - 1, 0).reshape(a.shape[mode - 1], -1)
    return np.sqrt((flat * flat).sum(axis=1))


def evaluate(g: GaugeSpec, m: Tensor) -> float:
    """u(m)."""
    _check_arg(g, m)
    a = m.array
    if g.variant == "entrywise-l1":
        return float(np.abs(a).sum())
    if g.variant == "weighted-l1":
        return float((g.weights.array * np.abs(a)).sum())
    if g.variant == "fiber-group-l2":
        return float(_fiber_norms(a, g.mode).sum())
    if g.variant == "slice-frobenius":
        return float(_slice_norms(a, g.mode).sum())
    # lq
    s = float((np.abs(a) ** g.q).sum())
    return s ** (1.0 / g.q)


def dual_evaluate(g: GaugeSpec, m: Tensor) -> float:
    """sup{<m, x> : u(x) <= 1} in closed form.

    For lq with q <= 1 the supremum is max|m|: on the lq ball the l1 norm is
    dominated by the lq value, so signed coordinate vectors are extremal.
    """
    _check_arg(g, m)
    a = m.array
    if g.variant == "entrywise-l1":
        return float(np.abs(a).max())
    if g.variant == "weighted-l1":
        return float((np.abs(a) / g.weights.array).max())
    if g.variant == "fiber-group-l2":
        return float(_fiber_norms(a, g.mode).max())
    if g.variant == "slice-frobenius":
        return float(_slice_norms(a, g.mode).max())
    return float(np.abs(a).max())


def symmetrized_size(g: GaugeSpec, m: Tensor) -> float:
    """u(m) + u(-m). Both terms evaluated so non-symmetric variants keep working."""
    return evaluate(g, m) + evaluate(g, -m)


def prox(g: GaugeSpec, m: Tensor, tau: float) -> Tensor:
    """argmin_x { 0.5 ||x - m||^2 + tau u(x) } for convex gauges."""
    if tau < 0.0:
        raise ValueError("threshold must be nonnegative")
    if not g.convex:
        raise UnsupportedGaugeError(f"no proximal map for non-convex lq (q={g.q})")
    _check_arg(g, m)
    if tau == 0.0:
        return m
    a = m.array
    if g.variant in ("entrywise-l1", "lq"):
        return Tensor(np.sign(a) * np.maximum(np.abs(a) - tau, 0.0))
    if g.variant == "weighted-l1":
        return Tensor(np.sign(a) * np.maximum(np.abs(a) - tau * g.weights.array, 0.0))
    if g.variant == "fiber-group-l2":
        norms = _fiber_norms(a, g.mode)
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = np.where(norms > tau, 1.0 - tau / np.where(norms > 0, norms, 1.0), 0.0)
        return Tensor(a * np.expand_dims(factor, axis=g.mode - 1))
    # slice-frobenius
    norms = _slice_norms(a, g.mode)
    factor = np.where(norms > tau, 1.0 - tau / np.where(norms > 0, norms, 1.0), 0.0)
    shape = [1] * m.order
    shape[g.mode - 1] = m.dims[g.mode - 1]
    return Tensor(a * factor.reshape(shape))


def holder_check(g: GaugeSpec, m: Tensor, m_prime: Tensor) -> bool:
    """Whether <m, m'> <= dual(m) * u(m') + slack."""
    lhs = inner_product(m, m_prime)
    return lhs <= dual_evaluate(g, m) * evaluate(g, m_prime) + HOLDER_SLACK
