"""Configuration-driven Monte Carlo harness.

Loads an experiment description from JSON, draws one sparse truth, runs
independent replicates (sample data, compute the gauge dual of the noise
term, pick the tuning level r, fit, evaluate the exact KL loss, check the
oracle bound), aggregates the results, and writes deterministic outputs:
replicates.csv, report.json, and SVG plots.

Determinism layout: SeedSequence(seed) is spawned into replicates + 1
children; child 0 draws the truth (and the shared design), child i + 1
drives replicate i.  Each replicate owns its generator, so results are
byte-identical for any worker count and for serial vs threaded runs.

Scale bookkeeping: tensor-regression and glm records carry sums over the
n observations (negative log-likelihood, noise term, KL loss), and r lives
on that same scale.  Graphical records work per sample: r is a per-sample
penalty, the recorded loss is the Stein-style loss (twice the per-sample
Gaussian KL), and the solver gap is the per-sample objective gap.

Timing: each record measures wall seconds, but serialized outputs write the
seconds field as 0.0 so reruns are byte-identical; real totals are reported
on the console only.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .calibration import (
    calibrate_graphical,
    calibrate_logistic,
    calibrate_tensor_regression,
    validate_design,
)
from .errors import (
    CalibrationError,
    ConfigError,
    DomainError,
    ShapeError,
    SolverError,
)
from .gauges import GaugeSpec, dual_evaluate, symmetrized_size
from .models import (
    FAMILIES,
    GlmTensorModel,
    GraphicalModel,
    TensorRegressionModel,
    glm_objective,
    kl_loss_glm,
    kl_loss_graphical,
    kl_loss_tensor_regression,
    noise_matrix_graphical,
    noise_term_glm,
    noise_term_tensor_regression,
    sample_gaussian_graphical,
    sample_glm,
    sample_tensor_regression,
    second_moment,
    tensor_regression_objective,
)
from .solvers import SolverSettings, fit, fit_graphical_lasso
from .tensors import Tensor

__all__ = [
    "BOUND_SLACK",
    "CSV_COLUMNS",
    "SCHEMA_VERSION",
    "ExperimentConfig",
    "ReplicateRecord",
    "SimulationReport",
    "aggregate",
    "check_oracle_bound",
    "config_from_dict",
    "config_to_dict",
    "emit_outputs",
    "generate_truth",
    "load_config",
    "load_report",
    "run_replicate",
    "run_simulation",
]

SCHEMA_VERSION = 1

# Absorbs floating-point rounding in the oracle-bound comparison.
BOUND_SLACK = 1e-9

CSV_COLUMNS = (
    "replicate",
    "family",
    "noise_dual",
    "r",
    "kl_loss",
    "bound_value",
    "solver_gap",
    "r_condition",
    "bound_ok",
    "seconds",
)

DESIGN_KINDS = ("normalized-gaussian", "file")
COVARIANCE_KINDS = ("identity", "scaled-identity")
POLICY_KINDS = ("calibrated", "empirical-margin", "fixed")

_MAX_SEED = 2**64


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment description; build instances via
    config_from_dict or load_config rather than directly."""

    family: str
    dimensions: tuple[int, ...]
    n: int
    replicates: int
    seed: int
    sparsity: int
    magnitude: float
    gauge: GaugeSpec
    policy_kind: str
    solver: SolverSettings
    schema_version: int = SCHEMA_VERSION
    policy_t: float | None = None
    policy_margin: float | None = None
    policy_value: float | None = None
    design_kind: str | None = None
    design_path: str | None = None
    covariance_kind: str | None = None
    covariance_scale: float | None = None
    sigma2: float | None = None
    redraw_design: bool = False
    output_dir: str | None = None

    @property
    def parameter_dims(self) -> tuple[int, ...]:
        if self.family == "graphical":
            p = self.dimensions[0]
            return (p, p)
        return self.dimensions

    @property
    def sparsity_capacity(self) -> int:
        if self.family == "graphical":
            p = self.dimensions[0]
            return p * (p - 1) // 2
        return int(np.prod(self.dimensions))


def _check_keys(mapping, allowed, where):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        names = ", ".join(repr(k) for k in unknown)
        raise ConfigError(f"unknown key(s) {names} in {where}")


def _get_mapping(data, key, where, default=None):
    value = data.get(key, default)
    if value is None:
        return None
    if not isinstance(value, dict):
        raise ConfigError(f"{where}.{key} must be an object")
    return value


def _as_int(value, where, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where} must be at least {minimum}")
    if maximum is not None and value > maximum:
        raise ConfigError(f"{where} must be at most {maximum}")
    return int(value)


def _as_float(value, where, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number")
    out = float(value)
    if not math.isfinite(out):
        raise ConfigError(f"{where} must be finite")
    if positive and not out > 0.0:
        raise ConfigError(f"{where} must be positive")
    return out


def _as_bool(value, where):
    if not isinstance(value, bool):
        raise ConfigError(f"{where} must be a boolean")
    return value


def _as_str(value, where, choices=None):
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string")
    if choices is not None and value not in choices:
        opts = ", ".join(repr(c) for c in choices)
        raise ConfigError(f"{where} must be one of {opts}, got {value!r}")
    return value


def _require(data, key, where="config"):
    if key not in data:
        raise ConfigError(f"missing key {key!r} in {where}")
    return data[key]


def _parse_dimensions(value, family):
    if not isinstance(value, list) or not value:
        raise ConfigError("dimensions must be a non-empty list of integers")
    dims = tuple(_as_int(v, "dimensions entry", minimum=1) for v in value)
    if family == "tensor-regression" and len(dims) < 2:
        raise ConfigError("tensor-regression needs at least two dimensions")
    if family == "graphical" and len(dims) != 1:
        raise ConfigError("graphical dimensions must be a single matrix size [p]")
    return dims


def _parse_gauge(data, family, dims):
    gauge_data = _get_mapping(data, "gauge", "config")
    if gauge_data is None:
        raise ConfigError("missing key 'gauge' in config")
    _check_keys(gauge_data, {"variant", "mode", "q", "weights"}, "gauge")
    variant = _as_str(_require(gauge_data, "variant", "gauge"), "gauge.variant")
    if family == "graphical" and variant != "entrywise-l1":
        raise ConfigError("graphical experiments require the entrywise-l1 gauge")
    mode = gauge_data.get("mode")
    if mode is not None:
        mode = _as_int(mode, "gauge.mode", minimum=1, maximum=len(dims))
    q = gauge_data.get("q")
    if q is not None:
        q = _as_float(q, "gauge.q")
    weights = gauge_data.get("weights")
    if weights is not None:
        try:
            arr = np.asarray(weights, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"gauge.weights is not a numeric array: {exc}") from None
        if arr.shape != dims:
            raise ConfigError(
                f"gauge.weights shape {arr.shape} does not match dimensions {dims}"
            )
        weights = Tensor(arr)
    try:
        gauge = GaugeSpec(variant, weights=weights, mode=mode, q=q)
    except ValueError as exc:
        raise ConfigError(f"invalid gauge: {exc}") from None
    if not gauge.convex:
        raise ConfigError("lq with q < 1 is evaluation-only; fits need a convex gauge")
    return gauge


def _parse_policy(data, family, dims, n):
    policy = _get_mapping(data, "r_policy", "config")
    if policy is None:
        raise ConfigError("missing key 'r_policy' in config")
    kind = _as_str(_require(policy, "kind", "r_policy"), "r_policy.kind", POLICY_KINDS)
    if kind == "calibrated":
        _check_keys(policy, {"kind", "t"}, "r_policy")
        t = _as_float(_require(policy, "t", "r_policy"), "r_policy.t", positive=True)
        if family == "glm-gaussian":
            raise ConfigError("no calibrated tuning rule covers glm-gaussian")
        if family == "glm-logistic" and len(dims) != 1:
            raise ConfigError("calibrated logistic tuning needs vector covariates")
        if family == "graphical":
            p = dims[0]
            if p < 2:
                raise ConfigError("calibrated graphical tuning needs p >= 2")
            log_pairs = math.log(p * (p - 1))
            if n / 4.0 <= log_pairs:
                raise ConfigError(
                    f"calibrated graphical tuning needs n > {4.0 * log_pairs:.3f} for p = {p}"
                )
            t_max = math.sqrt(n / 4.0 - log_pairs)
            if t >= t_max:
                raise ConfigError(
                    f"r_policy.t must be below {t_max:.6g} for n = {n}, p = {p}"
                )
        return kind, t, None, None
    if kind == "empirical-margin":
        _check_keys(policy, {"kind", "margin"}, "r_policy")
        margin = _as_float(_require(policy, "margin", "r_policy"), "r_policy.margin")
        if margin < 1.0:
            raise ConfigError("r_policy.margin must be at least 1")
        return kind, None, margin, None
    _check_keys(policy, {"kind", "value"}, "r_policy")
    value = _as_float(_require(policy, "value", "r_policy"), "r_policy.value")
    if not value > 0.0:
        raise ConfigError("r_policy.value must be positive")
    return kind, None, None, value


def _parse_solver(data):
    solver = _get_mapping(data, "solver", "config", default={})
    allowed = {
        "max_iterations",
        "objective_tol",
        "initial_step",
        "shrink",
        "accelerate",
        "step_floor",
    }
    _check_keys(solver, allowed, "solver")
    kwargs = {}
    for key in ("max_iterations",):
        if key in solver:
            kwargs[key] = _as_int(solver[key], f"solver.{key}", minimum=1)
    for key in ("objective_tol", "initial_step", "shrink", "step_floor"):
        if key in solver:
            kwargs[key] = _as_float(solver[key], f"solver.{key}")
    if "accelerate" in solver:
        kwargs["accelerate"] = _as_bool(solver["accelerate"], "solver.accelerate")
    try:
        return SolverSettings(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid solver settings: {exc}") from None


def config_from_dict(data) -> ExperimentConfig:
    """Validate a parsed JSON object; unknown keys are rejected everywhere.

    Purely structural: file-backed designs are checked by load_config."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top_keys = {
        "schema_version",
        "family",
        "dimensions",
        "n",
        "replicates",
        "seed",
        "truth",
        "design",
        "covariance",
        "sigma2",
        "gauge",
        "r_policy",
        "solver",
        "redraw_design",
        "output_dir",
    }
    _check_keys(data, top_keys, "config")
    version = _as_int(_require(data, "schema_version"), "schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    family = _as_str(_require(data, "family"), "family", FAMILIES)
    dims = _parse_dimensions(_require(data, "dimensions"), family)
    n = _as_int(_require(data, "n"), "n", minimum=1)
    replicates = _as_int(_require(data, "replicates"), "replicates", minimum=1)
    seed = _as_int(_require(data, "seed"), "seed", minimum=0, maximum=_MAX_SEED - 1)

    truth = _get_mapping(data, "truth", "config")
    if truth is None:
        raise ConfigError("missing key 'truth' in config")
    _check_keys(truth, {"sparsity", "magnitude"}, "truth")
    sparsity = _as_int(_require(truth, "sparsity", "truth"), "truth.sparsity", minimum=0)
    magnitude = _as_float(
        _require(truth, "magnitude", "truth"), "truth.magnitude", positive=True
    )

    design_kind = design_path = None
    if family == "graphical":
        if "design" in data:
            raise ConfigError("graphical experiments take no design")
    else:
        design = _get_mapping(data, "design", "config", default={"kind": "normalized-gaussian"})
        _check_keys(design, {"kind", "path"}, "design")
        design_kind = _as_str(
            _require(design, "kind", "design"), "design.kind", DESIGN_KINDS
        )
        if design_kind == "file":
            design_path = _as_str(_require(design, "path", "design"), "design.path")
            if family != "tensor-regression" and len(dims) != 1:
                raise ConfigError("file designs support only matrix covariates")
        elif "path" in design:
            raise ConfigError("design.path is only valid with kind 'file'")

    covariance_kind = covariance_scale = None
    if family == "tensor-regression":
        covariance = _get_mapping(data, "covariance", "config", default={"kind": "identity"})
        _check_keys(covariance, {"kind", "scale"}, "covariance")
        covariance_kind = _as_str(
            _require(covariance, "kind", "covariance"), "covariance.kind", COVARIANCE_KINDS
        )
        if covariance_kind == "scaled-identity":
            covariance_scale = _as_float(
                _require(covariance, "scale", "covariance"), "covariance.scale", positive=True
            )
        elif "scale" in covariance:
            raise ConfigError("covariance.scale is only valid with kind 'scaled-identity'")
    elif "covariance" in data:
        raise ConfigError("covariance is only valid for tensor-regression")

    sigma2 = None
    if family == "glm-gaussian":
        sigma2 = _as_float(data.get("sigma2", 1.0), "sigma2", positive=True)
    elif "sigma2" in data:
        raise ConfigError("sigma2 is only valid for glm-gaussian")

    gauge = _parse_gauge(data, family, (dims[0], dims[0]) if family == "graphical" else dims)
    policy_kind, policy_t, policy_margin, policy_value = _parse_policy(data, family, dims, n)
    if policy_kind == "calibrated" and gauge.variant != "entrywise-l1":
        raise ConfigError("calibrated tuning is derived for the entrywise-l1 gauge")
    solver = _parse_solver(data)

    redraw = data.get("redraw_design", False)
    redraw = _as_bool(redraw, "redraw_design")
    if redraw and family == "graphical":
        raise ConfigError("graphical experiments have no design to redraw")
    if redraw and design_kind == "file":
        raise ConfigError("file designs cannot be redrawn")

    output_dir = data.get("output_dir")
    if output_dir is not None:
        output_dir = _as_str(output_dir, "output_dir")

    config = ExperimentConfig(
        family=family,
        dimensions=dims,
        n=n,
        replicates=replicates,
        seed=seed,
        sparsity=sparsity,
        magnitude=magnitude,
        gauge=gauge,
        policy_kind=policy_kind,
        solver=solver,
        schema_version=version,
        policy_t=policy_t,
        policy_margin=policy_margin,
        policy_value=policy_value,
        design_kind=design_kind,
        design_path=design_path,
        covariance_kind=covariance_kind,
        covariance_scale=covariance_scale,
        sigma2=sigma2,
        redraw_design=redraw,
        output_dir=output_dir,
    )
    if config.sparsity > config.sparsity_capacity:
        raise ConfigError(
            f"truth.sparsity {config.sparsity} exceeds the "
            f"{config.sparsity_capacity} available positions"
        )
    return config


def _gauge_dict(gauge: GaugeSpec) -> dict:
    out = {"variant": gauge.variant}
    if gauge.mode is not None:
        out["mode"] = gauge.mode
    if gauge.q is not None:
        out["q"] = gauge.q
    if gauge.weights is not None:
        out["weights"] = gauge.weights.array.tolist()
    return out


def config_to_dict(config: ExperimentConfig) -> dict:
    """Canonical JSON form with defaults materialized; round-trips through
    config_from_dict."""
    if config.policy_kind == "calibrated":
        policy = {"kind": "calibrated", "t": config.policy_t}
    elif config.policy_kind == "empirical-margin":
        policy = {"kind": "empirical-margin", "margin": config.policy_margin}
    else:
        policy = {"kind": "fixed", "value": config.policy_value}
    s = config.solver
    doc = {
        "schema_version": config.schema_version,
        "family": config.family,
        "dimensions": list(config.dimensions),
        "n": config.n,
        "replicates": config.replicates,
        "seed": config.seed,
        "truth": {"sparsity": config.sparsity, "magnitude": config.magnitude},
        "gauge": _gauge_dict(config.gauge),
        "r_policy": policy,
        "solver": {
            "max_iterations": s.max_iterations,
            "objective_tol": s.objective_tol,
            "initial_step": s.initial_step,
            "shrink": s.shrink,
            "accelerate": s.accelerate,
            "step_floor": s.step_floor,
        },
        "redraw_design": config.redraw_design,
    }
    if config.family != "graphical":
        design = {"kind": config.design_kind}
        if config.design_path is not None:
            design["path"] = config.design_path
        doc["design"] = design
    if config.family == "tensor-regression":
        covariance = {"kind": config.covariance_kind}
        if config.covariance_scale is not None:
            covariance["scale"] = config.covariance_scale
        doc["covariance"] = covariance
    if config.family == "glm-gaussian":
        doc["sigma2"] = config.sigma2
    if config.output_dir is not None:
        doc["output_dir"] = config.output_dir
    return doc


def _load_design_file(config: ExperimentConfig) -> np.ndarray:
    try:
        arr = np.loadtxt(config.design_path, dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read design file: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"cannot parse design file: {exc}") from None
    expected = (config.n, config.dimensions[0])
    if arr.shape != expected:
        raise ConfigError(
            f"design file has shape {arr.shape}, config expects {expected}"
        )
    if not np.all(np.isfinite(arr)):
        raise ConfigError("design file contains non-finite entries")
    return arr


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file.

    design.path is resolved relative to the config file; file-backed designs
    are read once here to check shape and, under the calibrated policy, the
    column normalization the tuning rules assume."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    config = config_from_dict(data)
    if config.design_path is not None:
        resolved = Path(config.design_path)
        if not resolved.is_absolute():
            resolved = path.parent / resolved
        config = replace(config, design_path=str(resolved))
        design = _load_design_file(config)
        if config.policy_kind == "calibrated":
            check = validate_design(design)
            if not check.all_ok:
                deviation = np.max(np.abs(np.asarray(check.measured) - 1.0))
                raise ConfigError(
                    "calibrated tuning needs normalized design columns; "
                    f"max deviation {deviation:.3g}"
                )
    return config


# ---------------------------------------------------------------------------
# Truth and design generation
# ---------------------------------------------------------------------------

def _sparse_values(rng, sparsity: int, magnitude: float):
    signs = rng.integers(0, 2, size=sparsity) * 2.0 - 1.0
    mags = rng.uniform(magnitude / 2.0, magnitude, size=sparsity)
    return signs * mags


def _normalized_columns(arr: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.mean(np.square(arr), axis=0))
    return arr / scale


def _draw_design(config: ExperimentConfig, rng) -> np.ndarray:
    if config.design_kind == "file":
        return _load_design_file(config)
    if config.family == "tensor-regression":
        shape = (config.n, config.dimensions[0])
    else:
        shape = (config.n, *config.dimensions)
    return _normalized_columns(rng.standard_normal(shape))


def generate_truth(config: ExperimentConfig, rng):
    """Draw the sparse truth (and the design, for families that carry one)
    and return the model instance.

    RNG call order is fixed (support, signs, magnitudes, then design) so
    byte determinism does not depend on incidental evaluation order.
    Support positions are uniform without replacement; nonzero values are
    drawn uniformly from [magnitude/2, magnitude] with a random sign.
    Graphical truths place the draws on off-diagonal pairs symmetrically
    and set each diagonal to the row l1 mass plus 0.5, which keeps the
    precision matrix strictly diagonally dominant, hence positive definite.
    """
    if config.family == "graphical":
        p = config.dimensions[0]
        rows, cols = np.triu_indices(p, k=1)
        pick = rng.choice(rows.size, size=config.sparsity, replace=False)
        values = _sparse_values(rng, config.sparsity, config.magnitude)
        prec = np.zeros((p, p))
        prec[rows[pick], cols[pick]] = values
        prec = prec + prec.T
        np.fill_diagonal(prec, np.abs(prec).sum(axis=1) + 0.5)
        return GraphicalModel(prec)
    size = config.sparsity_capacity
    pick = rng.choice(size, size=config.sparsity, replace=False)
    values = _sparse_values(rng, config.sparsity, config.magnitude)
    flat = np.zeros(size)
    flat[pick] = values
    truth = Tensor(flat.reshape(config.dimensions))
    design = _draw_design(config, rng)
    if config.family == "tensor-regression":
        scale = config.covariance_scale if config.covariance_kind == "scaled-identity" else 1.0
        covariances = tuple(scale * np.eye(d) for d in config.dimensions[1:])
        return TensorRegressionModel(truth, design, covariances)
    if config.family == "glm-gaussian":
        return GlmTensorModel(truth, design, "gaussian", sigma2=config.sigma2)
    return GlmTensorModel(truth, design, "logistic")


# ---------------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicateRecord:
    """Outcome of one replicate; scalar fields are NaN when failed."""

    index: int
    family: str
    noise_dual: float
    r: float
    kl_loss: float
    bound_value: float
    solver_gap: float
    r_condition: bool
    bound_ok: bool
    seconds: float
    failed: bool = False
    error: str | None = None


def check_oracle_bound(kl_loss: float, r: float, symmetrized: float, gap: float) -> bool:
    """Loss bounded by r times the symmetrized truth size plus the solver
    gap, with a small slack absorbing floating-point rounding."""
    return bool(kl_loss <= r * symmetrized + gap + BOUND_SLACK)


def _pick_r(model, config: ExperimentConfig, noise_dual: float) -> float:
    if config.policy_kind == "fixed":
        return config.policy_value
    if config.policy_kind == "empirical-margin":
        return config.policy_margin * noise_dual
    if config.family == "tensor-regression":
        return calibrate_tensor_regression(model, config.policy_t, config.gauge).threshold
    if config.family == "glm-logistic":
        return calibrate_logistic(model, config.policy_t, config.gauge).threshold
    return calibrate_graphical(model, config.n, config.policy_t).threshold


def run_replicate(model, config: ExperimentConfig, rng, index: int) -> ReplicateRecord:
    """Run one replicate with its own generator.  Solver and numerical
    failures are recorded on the replicate, not raised."""
    start = time.perf_counter()
    noise_dual = r_used = kl = bound = gap = float("nan")
    r_condition = bound_ok = False
    failed = False
    error = None
    try:
        if config.redraw_design and config.family != "graphical":
            design = _draw_design(config, rng)
            key = "design" if config.family == "tensor-regression" else "covariates"
            model = replace(model, **{key: design})
        if config.family == "graphical":
            data = sample_gaussian_graphical(model, config.n, rng)
            noise = Tensor(noise_matrix_graphical(model, data))
            truth = Tensor(model.precision)
        elif config.family == "tensor-regression":
            data = sample_tensor_regression(model, rng)
            noise = noise_term_tensor_regression(model, data)
            truth = model.truth
        else:
            data = sample_glm(model, rng)
            noise = noise_term_glm(model, data)
            truth = model.truth
        noise_dual = dual_evaluate(config.gauge, noise)
        r_used = _pick_r(model, config, noise_dual)
        r_condition = bool(noise_dual <= r_used)
        if config.family == "graphical":
            result = fit_graphical_lasso(second_moment(data), r_used, config.solver)
            # per-sample penalty scale pairs with the Stein-style loss,
            # twice the per-sample Gaussian KL
            kl = 2.0 * kl_loss_graphical(model, result.estimate)
        else:
            if config.family == "tensor-regression":
                objective = tensor_regression_objective(model, data)
            else:
                objective = glm_objective(model, data)
            init = Tensor(np.zeros(config.dimensions))
            result = fit(objective, config.gauge, r_used, init, config.solver)
            if config.family == "tensor-regression":
                kl = kl_loss_tensor_regression(model, result.estimate)
            else:
                kl = kl_loss_glm(model, result.estimate)
        gap = result.gap
        symmetrized = symmetrized_size(config.gauge, truth)
        bound = r_used * symmetrized
        scalars = (noise_dual, r_used, kl, bound, gap)
        if not all(math.isfinite(v) for v in scalars):
            raise SolverError(f"non-finite replicate quantities {scalars}")
        bound_ok = check_oracle_bound(kl, r_used, symmetrized, gap)
    except (SolverError, CalibrationError, DomainError, ShapeError,
            np.linalg.LinAlgError, ValueError) as exc:
        failed = True
        error = f"{type(exc).__name__}: {exc}"
        kl = bound = gap = float("nan")
        r_condition = bound_ok = False
    seconds = time.perf_counter() - start
    return ReplicateRecord(
        index=index,
        family=config.family,
        noise_dual=noise_dual,
        r=r_used,
        kl_loss=kl,
        bound_value=bound,
        solver_gap=gap,
        r_condition=r_condition,
        bound_ok=bound_ok,
        seconds=seconds,
        failed=failed,
        error=error,
    )


# ---------------------------------------------------------------------------
# Aggregation and simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimulationReport:
    config: ExperimentConfig
    records: tuple[ReplicateRecord, ...]
    aggregates: dict
    wall_seconds: float = 0.0


def aggregate(records, config: ExperimentConfig) -> dict:
    """Summaries over the records.  Raises if every replicate failed.

    The oracle-bound pass rate is taken only over replicates where the
    r-condition holds; coverage entries are filled for the calibrated
    policy and null otherwise.  total_seconds is fixed at 0.0, matching
    the serialized records (timings stay out of deterministic outputs)."""
    ok = [rec for rec in records if not rec.failed]
    if not ok:
        raise RuntimeError("all replicates failed; nothing to aggregate")
    checked = [rec for rec in ok if rec.r_condition]
    out = {
        "replicates": len(records),
        "failed": len(records) - len(ok),
        "kl_mean": float(np.mean([rec.kl_loss for rec in ok])),
        "kl_median": float(np.median([rec.kl_loss for rec in ok])),
        "bound_checked": len(checked),
        "bound_pass_rate": (
            float(np.mean([rec.bound_ok for rec in checked])) if checked else None
        ),
        "coverage_rate": None,
        "coverage_guarantee": None,
        "coverage_slack": None,
        "coverage_pass": None,
        "total_seconds": 0.0,
    }
    if config.policy_kind == "calibrated":
        tails = 4.0 if config.family == "graphical" else 2.0
        guarantee = 1.0 - tails * math.exp(-config.policy_t**2)
        rate = float(np.mean([rec.r_condition for rec in ok]))
        slack = 3.0 * math.sqrt(max(guarantee * (1.0 - guarantee), 0.0) / len(ok))
        out["coverage_rate"] = rate
        out["coverage_guarantee"] = guarantee
        out["coverage_slack"] = slack
        out["coverage_pass"] = bool(rate >= guarantee - slack)
    return out


def run_simulation(config: ExperimentConfig, workers: int = 1) -> SimulationReport:
    """Draw the truth from seed child 0, run replicate i on child i + 1,
    and aggregate.  Output is identical for every worker count."""
    if workers < 1:
        raise ValueError("workers must be at least 1")
    children = np.random.SeedSequence(config.seed).spawn(config.replicates + 1)
    model = generate_truth(config, np.random.default_rng(children[0]))
    start = time.perf_counter()
    if workers == 1:
        records = [
            run_replicate(model, config, np.random.default_rng(children[i + 1]), i)
            for i in range(config.replicates)
        ]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    run_replicate, model, config, np.random.default_rng(children[i + 1]), i
                )
                for i in range(config.replicates)
            ]
            records = [future.result() for future in futures]
    records.sort(key=lambda rec: rec.index)
    aggregates = aggregate(records, config)
    wall = time.perf_counter() - start
    return SimulationReport(config, tuple(records), aggregates, wall)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _json_scalar(value: float):
    return float(value) if math.isfinite(value) else None


def _record_to_dict(rec: ReplicateRecord) -> dict:
    return {
        "replicate": rec.index,
        "family": rec.family,
        "noise_dual": _json_scalar(rec.noise_dual),
        "r": _json_scalar(rec.r),
        "kl_loss": _json_scalar(rec.kl_loss),
        "bound_value": _json_scalar(rec.bound_value),
        "solver_gap": _json_scalar(rec.solver_gap),
        "r_condition": rec.r_condition,
        "bound_ok": rec.bound_ok,
        "seconds": 0.0,
        "failed": rec.failed,
        "error": rec.error,
    }


def _record_from_dict(data) -> ReplicateRecord:
    def scalar(key):
        value = data[key]
        return float("nan") if value is None else float(value)

    return ReplicateRecord(
        index=int(data["replicate"]),
        family=data["family"],
        noise_dual=scalar("noise_dual"),
        r=scalar("r"),
        kl_loss=scalar("kl_loss"),
        bound_value=scalar("bound_value"),
        solver_gap=scalar("solver_gap"),
        r_condition=bool(data["r_condition"]),
        bound_ok=bool(data["bound_ok"]),
        seconds=float(data["seconds"]),
        failed=bool(data["failed"]),
        error=data["error"],
    )


def report_to_json(report: SimulationReport) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": config_to_dict(report.config),
        "aggregates": report.aggregates,
        "records": [_record_to_dict(rec) for rec in report.records],
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_outputs(report: SimulationReport, out_dir) -> dict:
    """Write replicates.csv, report.json, and the plots directory.

    Floats are rendered with repr (shortest round-trip), booleans as
    true/false, rows ordered by replicate; reruns of the same config are
    byte-identical."""
    from . import plots as plots_module

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "replicates.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in report.records:
            writer.writerow([
                rec.index,
                rec.family,
                repr(rec.noise_dual),
                repr(rec.r),
                repr(rec.kl_loss),
                repr(rec.bound_value),
                repr(rec.solver_gap),
                "true" if rec.r_condition else "false",
                "true" if rec.bound_ok else "false",
                "0.0",
            ])
    report_path = out / "report.json"
    report_path.write_text(report_to_json(report))
    plot_paths = plots_module.write_plots(report, out / "plots")
    return {"csv": csv_path, "report": report_path, "plots": plot_paths}


def load_report(path) -> SimulationReport:
    """Read report.json back and verify the stored aggregates match a
    recomputation from the stored records."""
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema {doc.get('schema_version')!r}")
    config = config_from_dict(doc["config"])
    records = tuple(_record_from_dict(d) for d in doc["records"])
    recomputed = aggregate(records, config)
    if recomputed != doc["aggregates"]:
        raise ValueError("stored aggregates do not match the stored records")
    return SimulationReport(config, records, recomputed)
