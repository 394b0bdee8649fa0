"""Closed-form noise-level calibration with coverage guarantees.

Each calibrate_* function returns the penalty level r0(t) at which the
entrywise sup-norm dual of the family's noise term is exceeded with
probability at most 2*exp(-t^2) (4*exp(-t^2) for the graphical family).
The formulas are pure functions of the model and t; design assumptions
they rely on are measured and reported, and violations raise instead of
silently mis-calibrating.

Scale convention: the tensor-regression and logistic statements control a
noise term summed over samples ("sum" scale), while the graphical one is
stated for the per-sample second-moment deviation. CalibrationResult
carries the scale tag and a `threshold` property so downstream checks
always compare against the matching quantity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, UnsupportedGaugeError
from .gauges import GaugeSpec
from .models import GlmTensorModel, GraphicalModel, TensorRegressionModel, _mu

__all__ = [
    "AssumptionCheck",
    "CalibrationResult",
    "DesignValidation",
    "calibrate_tensor_regression",
    "calibrate_logistic",
    "calibrate_graphical",
    "validate_design",
    "NORMALIZATION_TOL",
    "DIAGONAL_TOL",
]

NORMALIZATION_TOL = 1e-6  # on per-column second moments of the design
DIAGONAL_TOL = 1e-8  # on constancy of inverse-covariance diagonals


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    measured: float
    requirement: str


@dataclass(frozen=True)
class CalibrationResult:
    r0: float
    t: float
    coverage: float
    noise_scale: str  # "sum" or "per-sample"
    assumptions: tuple[AssumptionCheck, ...]
    r0_per_sample: float | None = None

    @property
    def threshold(self) -> float:
        """The level to compare the noise dual against, on its own scale."""
        if self.noise_scale == "per-sample":
            return self.r0_per_sample
        return self.r0


@dataclass(frozen=True)
class DesignValidation:
    measured: tuple[float, ...]  # per-column sum(z^2)/n
    passed: tuple[bool, ...]
    all_ok: bool
    rescaled: np.ndarray  # z / scales, columns renormalized where possible
    scales: tuple[float, ...]


def _require_positive_t(t: float):
    if not np.isfinite(t) or t <= 0:
        raise ValueError("confidence parameter t must be positive")


def _require_l1_gauge(gauge: GaugeSpec | None):
    if gauge is not None and gauge.variant != "entrywise-l1":
        raise UnsupportedGaugeError(
            "calibration is available for the entrywise-l1 gauge only, "
            f"got {gauge.variant!r}")


def _column_check(z: np.ndarray) -> AssumptionCheck:
    n = z.shape[0]
    second = (z * z).sum(axis=0) / n
    deviation = float(np.abs(second - 1.0).max())
    return AssumptionCheck(
        name="column-normalization",
        passed=deviation <= NORMALIZATION_TOL,
        measured=deviation,
        requirement=f"max_j |sum_i z_ij^2/n - 1| <= {NORMALIZATION_TOL}",
    )


def calibrate_tensor_regression(model: TensorRegressionModel, t: float,
                                gauge: GaugeSpec | None = None) -> CalibrationResult:
    """r0(t) = (prod_k h_k) * sqrt(2 n (t^2 + log prod_j b_j)).

    Requires unit per-column second moments of the design and constant
    diagonals of each inverse covariance (whose common value is h_k^2).
    Coverage: the noise dual exceeds r0 with probability <= 2 exp(-t^2).
    """
    _require_positive_t(t)
    _require_l1_gauge(gauge)
    checks = [_column_check(model.design)]
    if not checks[0].passed:
        raise CalibrationError(
            "design columns are not normalized: max deviation of sum(z^2)/n "
            f"from 1 is {checks[0].measured:.3e} (tolerance {NORMALIZATION_TOL})")

    h_prod = 1.0
    for k, inv in enumerate(model.cov_inv, start=2):
        diag = np.diag(inv)
        level = float(diag.mean())
        deviation = float(np.abs(diag - level).max())
        checks.append(AssumptionCheck(
            name=f"inverse-covariance-diagonal-mode-{k}",
            passed=deviation <= DIAGONAL_TOL,
            measured=deviation,
            requirement=f"max_i |(S_k^-1)_ii - h_k^2| <= {DIAGONAL_TOL}",
        ))
        if not checks[-1].passed:
            raise CalibrationError(
                f"inverse covariance of mode {k} does not have a constant "
                f"diagonal: max deviation {deviation:.3e} "
                f"(tolerance {DIAGONAL_TOL})")
        h_prod *= np.sqrt(level)

    n = model.n
    log_cells = float(np.sum(np.log(model.truth.dims)))
    r0 = float(h_prod * np.sqrt(2.0 * n * (t * t + log_cells)))
    return CalibrationResult(
        r0=r0,
        t=float(t),
        coverage=1.0 - 2.0 * float(np.exp(-t * t)),
        noise_scale="sum",
        assumptions=tuple(checks),
    )


def calibrate_logistic(model: GlmTensorModel, t: float,
                       gauge: GaugeSpec | None = None) -> CalibrationResult:
    """r0(t) = sqrt((1 + 2 max_i p_i(1-p_i))/3 * n (t^2 + log b1)).

    The success probabilities p_i come from the true parameter, so this is
    an oracle-side computation for simulations. Requires vector covariates
    with unit per-column second moments. Coverage: 2 exp(-t^2) tail.
    """
    _require_positive_t(t)
    _require_l1_gauge(gauge)
    if model.family != "logistic":
        raise CalibrationError(
            f"logistic calibration needs a logistic model, got {model.family!r}")
    if model.truth.order != 1:
        raise CalibrationError(
            "logistic calibration covers vector (order-1) parameters only, "
            f"got order {model.truth.order}")
    check = _column_check(model.covariates)
    if not check.passed:
        raise CalibrationError(
            "covariate columns are not normalized: max deviation of "
            f"sum(z^2)/n from 1 is {check.measured:.3e} "
            f"(tolerance {NORMALIZATION_TOL})")

    p = _mu("logistic", model.theta_star)
    vmax = float((p * (1.0 - p)).max())
    n = model.n
    b1 = model.truth.dims[0]
    r0 = float(np.sqrt((1.0 + 2.0 * vmax) / 3.0 * n * (t * t + np.log(b1))))
    return CalibrationResult(
        r0=r0,
        t=float(t),
        coverage=1.0 - 2.0 * float(np.exp(-t * t)),
        noise_scale="sum",
        assumptions=(check,),
    )


def calibrate_graphical(model: GraphicalModel, n: int, t: float) -> CalibrationResult:
    """r0(t) = 80 * max_k cov_kk * sqrt(n (t^2 + log(p(p-1)))).

    Valid for 0 < t < sqrt(n/4 - log(p(p-1))). The returned r0 is on the
    summed-over-samples scale; r0_per_sample = r0/n matches the
    per-sample second-moment deviation the graphical fit penalizes, and
    `threshold` points at it. Coverage: 4 exp(-t^2) tail.
    """
    _require_positive_t(t)
    p = model.p
    if p < 2:
        raise CalibrationError("graphical calibration needs dimension >= 2")
    if n < 1:
        raise ValueError("sample count must be positive")
    log_pairs = float(np.log(p * (p - 1)))
    window_sq = n / 4.0 - log_pairs
    if window_sq <= 0:
        raise CalibrationError(
            f"no admissible t: need n/4 > log(p(p-1)) = {log_pairs:.4f}, "
            f"got n/4 = {n / 4.0}")
    t_max = float(np.sqrt(window_sq))
    if t >= t_max:
        raise CalibrationError(
            f"t={t} outside the admissible window (0, {t_max:.4f})")
    diag_max = float(np.diag(model.covariance).max())
    r0 = float(80.0 * diag_max * np.sqrt(n * (t * t + log_pairs)))
    return CalibrationResult(
        r0=r0,
        t=float(t),
        coverage=1.0 - 4.0 * float(np.exp(-t * t)),
        noise_scale="per-sample",
        assumptions=(AssumptionCheck(
            name="confidence-window",
            passed=True,
            measured=float(t),
            requirement=f"0 < t < {t_max:.6g}",
        ),),
        r0_per_sample=r0 / n,
    )


def validate_design(z, tolerance: float = NORMALIZATION_TOL) -> DesignValidation:
    """Measure per-column second moments and offer a normalizing rescale.

    scales[j] is what column j was divided by; a zero column cannot be
    rescaled, keeps scale 1.0, and fails the check.
    """
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"design must be a matrix, got shape {arr.shape}")
    n = arr.shape[0]
    second = (arr * arr).sum(axis=0) / n
    passed = np.abs(second - 1.0) <= tolerance
    scales = np.where(second > 0.0, np.sqrt(second), 1.0)
    rescaled = arr / scales
    return DesignValidation(
        measured=tuple(float(v) for v in second),
        passed=tuple(bool(b) for b in passed),
        all_ok=bool(passed.all()),
        rescaled=rescaled,
        scales=tuple(float(s) for s in scales),
    )
