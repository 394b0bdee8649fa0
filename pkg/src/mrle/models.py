"""Three regularized-likelihood model families: data samplers, exact
Kullback-Leibler losses, centered noise terms, and negative log-likelihood
objectives with gradients (additive constants dropped throughout, they cancel
in the estimator and in every KL formula).

Families:
  * tensor response regression with array-normal (Kronecker-covariance) noise
  * generalized linear tensor regression with canonical link
    (logistic and gaussian response)
  * centered Gaussian graphical model, precision-matrix parametrization

Per-sample quantities are stored stacked along axis 0 (responses (n, ...),
covariates (n, ...)): semantically a list of n tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .tensors import MatrixList, Tensor, inner_product, mode_product, tucker_product

FAMILIES = ("tensor-regression", "glm-logistic", "glm-gaussian", "graphical")


def _frozen_array(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, order="C", copy=True)
    out.setflags(write=False)
    return out


def _spd_cholesky(mat: np.ndarray, what: str) -> np.ndarray:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"{what} must be square, got {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
        raise DomainError(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise DomainError(f"{what} is not positive definite") from None


def _apply_along(arr: np.ndarray, mats, first_axis: int) -> np.ndarray:
    """Multiply arr by each matrix along consecutive axes: axis first_axis + j
    is contracted against the columns of mats[j]."""
    for j, m in enumerate(mats):
        ax = first_axis + j
        arr = np.moveaxis(np.tensordot(arr, m, axes=([ax], [1])), -1, ax)
    return arr


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Sampled responses for one replicate, stacked along axis 0."""

    family: str
    n: int
    responses: np.ndarray

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        resp = _frozen_array(self.responses)
        object.__setattr__(self, "responses", resp)
        if self.n < 1 or resp.shape[0] != self.n:
            raise ShapeError(f"responses hold {resp.shape[0]} samples, n={self.n}")
        if not np.all(np.isfinite(resp)):
            raise ValueError("responses must be finite")
        if self.family == "glm-logistic":
            if resp.ndim != 1 or not np.all((resp == 0.0) | (resp == 1.0)):
                raise ValueError("logistic responses must be scalars in {0, 1}")


# ---------------------------------------------------------------------------
# Family A: tensor response regression, array-normal noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TensorRegressionModel:
    """Y_i = truth x_1 z_i + E_i with E_i array-normal: E_i = N_i x {A_2..A_p},
    Sigma_k = A_k A_k', A_k the Cholesky factor.

    truth: (b_1, ..., b_p) with p >= 2; design: (n, b_1) rows z_i;
    covariances: Sigma_2..Sigma_p, each SPD (b_k, b_k).
    """

    truth: Tensor
    design: np.ndarray
    covariances: tuple[np.ndarray, ...]
    chol: tuple[np.ndarray, ...] = field(init=False, repr=False)
    chol_inv: tuple[np.ndarray, ...] = field(init=False, repr=False)
    cov_inv: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.truth, Tensor):
            raise TypeError("truth must be a Tensor")
        dims = self.truth.dims
        if len(dims) < 2:
            raise ShapeError("tensor regression needs order >= 2 (design mode plus noise modes)")
        z = _frozen_array(self.design)
        if z.ndim != 2 or z.shape[1] != dims[0]:
            raise ShapeError(f"design must be (n, {dims[0]}), got {z.shape}")
        if z.shape[0] < 1 or not np.all(np.isfinite(z)):
            raise ValueError("design needs n >= 1 finite rows")
        object.__setattr__(self, "design", z)
        covs = tuple(_frozen_array(c) for c in self.covariances)
        if len(covs) != len(dims) - 1:
            raise ShapeError(f"need {len(dims) - 1} covariance matrices, got {len(covs)}")
        chol = []
        for k, c in enumerate(covs, start=2):
            if c.shape != (dims[k - 1], dims[k - 1]):
                raise ShapeError(f"covariance for mode {k} must be {dims[k - 1]}x{dims[k - 1]}")
            chol.append(_spd_cholesky(c, f"covariance for mode {k}"))
        chol_inv = tuple(np.linalg.inv(a) for a in chol)
        cov_inv = tuple(ai.T @ ai for ai in chol_inv)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "chol", tuple(chol))
        object.__setattr__(self, "chol_inv", chol_inv)
        object.__setattr__(self, "cov_inv", cov_inv)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def noise_dims(self) -> tuple[int, ...]:
        return self.truth.dims[1:]


def _fitted(design: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Stacked mode-1 contractions: out[i] = lam x_1 z_i."""
    return np.einsum("ij,j...->i...", design, lam)


def sample_tensor_regression(model: TensorRegressionModel, rng) -> Dataset:
    """Draw standard-normal cores N_i and color them mode-by-mode with the
    Cholesky factors, then shift by the fitted means."""
    n = model.n
    cores = rng.standard_normal((n,) + model.noise_dims)
    noise = _apply_along(cores, model.chol, first_axis=1)
    responses = _fitted(model.design, model.truth.array) + noise
    return Dataset("tensor-regression", n, responses)


def kl_loss_tensor_regression(model: TensorRegressionModel, estimate: Tensor) -> float:
    """0.5 * sum_i || (truth - estimate) x_1 z_i x {Sigma_k^-1/2} ||^2,
    computed through the Gram matrix so the cost is n-free."""
    if estimate.dims != model.truth.dims:
        raise ShapeError(f"estimate shape {estimate.dims} != truth {model.truth.dims}")
    diff = model.truth - estimate
    gram = Tensor(model.design.T @ model.design)
    m = mode_product(diff, gram, 1)
    m = tucker_product(m, MatrixList(tuple(Tensor(c) for c in model.cov_inv), first_mode=2))
    return max(0.0, 0.5 * inner_product(m, diff))


def noise_term_tensor_regression(model: TensorRegressionModel, data: Dataset) -> Tensor:
    """sum_i (E_i x {Sigma_k^-1}) outer z_i, shape of truth; E_i are the
    residuals at the true parameter."""
    resid = data.responses - _fitted(model.design, model.truth.array)
    tilted = _apply_along(resid, model.cov_inv, first_axis=1)
    return Tensor(np.einsum("ij,i...->j...", model.design, tilted))


def negloglik_tensor_regression(model: TensorRegressionModel, lam: Tensor, data: Dataset):
    """0.5 * sum_i ||(Y_i - lam x_1 z_i) x {A_k^-1}||^2 and its gradient."""
    if lam.dims != model.truth.dims:
        raise ShapeError(f"parameter shape {lam.dims} != model {model.truth.dims}")
    resid = data.responses - _fitted(model.design, lam.array)
    white = _apply_along(resid, model.chol_inv, first_axis=1)
    value = 0.5 * float((white * white).sum())
    tilted = _apply_along(resid, model.cov_inv, first_axis=1)
    grad = -np.einsum("ij,i...->j...", model.design, tilted)
    return value, Tensor(grad)


class TensorRegressionObjective:
    """Solver-facing smooth part with precomputed sufficient statistics
    (Gram matrix and cross moment); per-iteration cost independent of n."""

    def __init__(self, model: TensorRegressionModel, data: Dataset):
        z = model.design
        self._gram = z.T @ z
        self._cov_inv = model.cov_inv
        tilted = _apply_along(data.responses, model.cov_inv, first_axis=1)
        self._cross = np.einsum("ij,i...->j...", z, tilted)
        white = _apply_along(data.responses, model.chol_inv, first_axis=1)
        self._const = float((white * white).sum())
        self.lower_bound = 0.0

    def _quad(self, x):
        out = np.tensordot(self._gram, x, axes=([1], [0]))
        return _apply_along(out, self._cov_inv, first_axis=1)

    def value(self, x):
        kx = self._quad(x)
        return 0.5 * (self._const - 2.0 * np.vdot(self._cross, x) + np.vdot(kx, x))

    def grad(self, x):
        return self._quad(x) - self._cross


def tensor_regression_objective(model, data) -> TensorRegressionObjective:
    return TensorRegressionObjective(model, data)


# ---------------------------------------------------------------------------
# Family B: generalized linear tensor regression, canonical link
# ---------------------------------------------------------------------------

GLM_FAMILIES = ("logistic", "gaussian")


def _mu(family: str, theta: np.ndarray) -> np.ndarray:
    if family == "gaussian":
        return theta
    out = np.empty_like(theta)
    pos = theta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-theta[pos]))
    e = np.exp(theta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _b(family: str, theta: np.ndarray) -> np.ndarray:
    if family == "gaussian":
        return 0.5 * theta * theta
    return np.logaddexp(0.0, theta)


@dataclass(frozen=True)
class GlmTensorModel:
    """Scalar responses with natural parameter theta_i = <truth, Z_i>.

    logistic: b(theta) = log(1+e^theta), alpha = 1;
    gaussian: b(theta) = theta^2/2, alpha = sigma2.
    covariates: (n, *truth.dims) stacked Z_i.
    """

    truth: Tensor
    covariates: np.ndarray
    family: str
    sigma2: float = 1.0
    theta_star: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.truth, Tensor):
            raise TypeError("truth must be a Tensor")
        if self.family not in GLM_FAMILIES:
            raise ValueError(f"unknown glm family {self.family!r}")
        cov = _frozen_array(self.covariates)
        if cov.ndim != self.truth.order + 1 or cov.shape[1:] != self.truth.dims:
            raise ShapeError(
                f"covariates must be (n, {self.truth.dims}), got {cov.shape}"
            )
        if cov.shape[0] < 1 or not np.all(np.isfinite(cov)):
            raise ValueError("covariates need n >= 1 finite entries")
        if self.family == "gaussian" and not self.sigma2 > 0.0:
            raise ValueError("gaussian family needs sigma2 > 0")
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        theta = cov.reshape(cov.shape[0], -1) @ self.truth.array.ravel()
        object.__setattr__(self, "theta_star", _frozen_array(theta))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def alpha(self) -> float:
        return 1.0 if self.family == "logistic" else self.sigma2

    @property
    def dataset_family(self) -> str:
        return "glm-" + self.family


def sample_glm(model: GlmTensorModel, rng) -> Dataset:
    theta = model.theta_star
    if model.family == "logistic":
        y = (rng.random(model.n) < _mu("logistic", theta)).astype(np.float64)
    else:
        y = theta + np.sqrt(model.sigma2) * rng.standard_normal(model.n)
    return Dataset(model.dataset_family, model.n, y)


def _theta(model: GlmTensorModel, lam: Tensor) -> np.ndarray:
    if lam.dims != model.truth.dims:
        raise ShapeError(f"parameter shape {lam.dims} != model {model.truth.dims}")
    zmat = model.covariates.reshape(model.n, -1)
    return zmat @ lam.array.ravel()


def kl_loss_glm(model: GlmTensorModel, estimate: Tensor) -> float:
    """(1/alpha) sum_i [ mu(theta*_i) (theta*_i - theta_i)
    - b(theta*_i) + b(theta_i) ]; nonnegative by convexity of b."""
    th_star = model.theta_star
    th_hat = _theta(model, estimate)
    fam = model.family
    val = (
        _mu(fam, th_star) * (th_star - th_hat) - _b(fam, th_star) + _b(fam, th_hat)
    ).sum() / model.alpha
    return max(0.0, float(val))


def noise_term_glm(model: GlmTensorModel, data: Dataset) -> Tensor:
    """(1/alpha) sum_i (y_i - mu(theta*_i)) Z_i."""
    resid = (data.responses - _mu(model.family, model.theta_star)) / model.alpha
    return Tensor(np.einsum("i,i...->...", resid, model.covariates))


def negloglik_glm(model: GlmTensorModel, lam: Tensor, data: Dataset):
    """(1/alpha) sum_i [ -y_i theta_i + b(theta_i) ] and its gradient."""
    theta = _theta(model, lam)
    value = float((-data.responses * theta + _b(model.family, theta)).sum()) / model.alpha
    resid = (_mu(model.family, theta) - data.responses) / model.alpha
    grad = np.einsum("i,i...->...", resid, model.covariates)
    return value, Tensor(grad)


class GlmObjective:
    """Solver-facing smooth part over flattened covariates."""

    def __init__(self, model: GlmTensorModel, data: Dataset):
        self._zmat = model.covariates.reshape(model.n, -1)
        self._y = data.responses
        self._family = model.family
        self._alpha = model.alpha
        if model.family == "logistic":
            self.lower_bound = 0.0
        else:
            self.lower_bound = -float((data.responses ** 2).sum()) / (2.0 * model.sigma2)

    def value(self, x):
        theta = self._zmat @ x.ravel()
        return float((-self._y * theta + _b(self._family, theta)).sum()) / self._alpha

    def grad(self, x):
        theta = self._zmat @ x.ravel()
        g = ((_mu(self._family, theta) - self._y) / self._alpha) @ self._zmat
        return g.reshape(x.shape)


def glm_objective(model, data) -> GlmObjective:
    return GlmObjective(model, data)


# ---------------------------------------------------------------------------
# Family C: centered Gaussian graphical model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphicalModel:
    """Samples X_i ~ N(0, precision^-1); precision SPD (p, p)."""

    precision: np.ndarray
    covariance: np.ndarray = field(init=False, repr=False)
    cov_chol: np.ndarray = field(init=False, repr=False)
    logdet_precision: float = field(init=False, repr=False)

    def __post_init__(self):
        prec = _frozen_array(self.precision)
        chol = _spd_cholesky(prec, "precision")
        cov = np.linalg.inv(prec)
        cov = (cov + cov.T) / 2.0
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "covariance", _frozen_array(cov))
        object.__setattr__(self, "cov_chol", _frozen_array(np.linalg.cholesky(cov)))
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        object.__setattr__(self, "logdet_precision", logdet)

    @property
    def p(self) -> int:
        return self.precision.shape[0]


def sample_gaussian_graphical(model: GraphicalModel, n: int, rng) -> Dataset:
    if n < 1:
        raise ValueError("need n >= 1 samples")
    x = rng.standard_normal((n, model.p)) @ model.cov_chol.T
    return Dataset("graphical", n, x)


def second_moment(data: Dataset) -> np.ndarray:
    """Sample second-moment matrix S = (1/n) sum_i X_i X_i'."""
    x = data.responses
    return x.T @ x / data.n


def _as_matrix(lam) -> np.ndarray:
    arr = lam.array if isinstance(lam, Tensor) else np.asarray(lam, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {arr.shape}")
    return arr


def kl_loss_graphical(model: GraphicalModel, estimate) -> float:
    """Per-sample KL: 0.5 (<estimate, precision^-1> - logdet estimate
    + logdet precision - p). Half of Stein's loss."""
    est = _as_matrix(estimate)
    if est.shape != model.precision.shape:
        raise ShapeError(f"estimate shape {est.shape} != model {model.precision.shape}")
    chol = _spd_cholesky(est, "estimate")
    logdet_est = 2.0 * float(np.log(np.diag(chol)).sum())
    val = 0.5 * (
        float(np.vdot(est, model.covariance)) - logdet_est
        + model.logdet_precision - model.p
    )
    return max(0.0, val)


def noise_matrix_graphical(model: GraphicalModel, data: Dataset) -> np.ndarray:
    """precision^-1 - S; its vectorized gauge dual lower-bounds the per-sample
    penalty level."""
    return model.covariance - second_moment(data)


def negloglik_graphical(data: Dataset, lam):
    """Per-sample objective S . lam - logdet lam and gradient S - lam^-1."""
    s = second_moment(data)
    arr = _as_matrix(lam)
    chol = _spd_cholesky(arr, "parameter")
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    value = float(np.vdot(s, arr)) - logdet
    inv = np.linalg.inv(arr)
    grad = s - (inv + inv.T) / 2.0
    return value, grad


class GraphicalObjective:
    """Smooth part S . lam - logdet lam over the SPD cone."""

    def __init__(self, s: np.ndarray):
        s = np.asarray(s, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ShapeError(f"second moment must be square, got {s.shape}")
        if not np.allclose(s, s.T, rtol=1e-10, atol=1e-12):
            raise DomainError("second moment must be symmetric")
        self._s = (s + s.T) / 2.0
        p = s.shape[0]
        try:
            chol = np.linalg.cholesky(self._s)
            # Smooth part is minimized at lam = S^-1 when S is PD.
            self.lower_bound = p + 2.0 * float(np.log(np.diag(chol)).sum())
        except np.linalg.LinAlgError:
            self.lower_bound = -np.inf

    def domain_ok(self, x):
        try:
            np.linalg.cholesky(x)
            return True
        except np.linalg.LinAlgError:
            return False

    def value(self, x):
        try:
            chol = np.linalg.cholesky(x)
        except np.linalg.LinAlgError:
            raise DomainError("parameter left the positive definite cone") from None
        return float(np.vdot(self._s, x)) - 2.0 * float(np.log(np.diag(chol)).sum())

    def grad(self, x):
        inv = np.linalg.inv(x)
        return self._s - (inv + inv.T) / 2.0


def graphical_objective(s) -> GraphicalObjective:
    return GraphicalObjective(s)
