"""Per-segment regressors: constant mean, least squares, and an exact GP.

The Gaussian process uses a composite kernel — a linear term plus an RBF
term — with hyperparameters learned by maximizing the log marginal
likelihood in log-space. Leaves are small enough that the exact O(m^3)
solve is affordable, which is the entire point of segmenting first.

Prediction paths avoid matrix-matrix BLAS calls on purpose: reductions are
written in elementwise/broadcast form so that predicting one record and
predicting a batch produce bitwise-identical numbers regardless of batch
size or chunking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize


class LeafFitError(RuntimeError):
    """A leaf regressor could not be fit (ill-conditioned or too small)."""


# ---------------------------------------------------------------------------
# Constant and linear models


@dataclass(frozen=True)
class ConstantModel:
    """Predicts the mean of the fitting responses, everywhere."""

    mean: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.full(X.shape[0], self.mean, dtype=np.float64)


def fit_constant(y: np.ndarray) -> ConstantModel:
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValueError("cannot fit a constant model to an empty response")
    return ConstantModel(mean=float(y.mean()))


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    intercept: float
    ridge_eps: float
    used_fallback: bool = False

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X * self.weights).sum(axis=1) + self.intercept


_FALLBACK_RIDGE = 1e-8


def fit_ols(X: np.ndarray, y: np.ndarray, ridge_eps: float = 0.0) -> LinearModel:
    """Least squares with optional ridge penalty on the weights.

    Solves the normal equations on the centered design, leaving the
    intercept unpenalized. A rank-deficient design with ridge_eps=0 falls
    back to a small default ridge (recorded on the returned model) instead
    of failing.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D and y 1-D with matching row counts")
    if X.shape[0] < 1:
        raise ValueError("cannot fit to an empty design")
    if ridge_eps < 0:
        raise ValueError("ridge_eps must be >= 0")

    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    gram = Xc.T @ Xc
    rhs = Xc.T @ yc
    scale = 1.0 + float(np.abs(y).max()) if y.size else 1.0

    def solve(eps: float) -> np.ndarray | None:
        try:
            w = np.linalg.solve(gram + eps * np.eye(X.shape[1]), rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(w)):
            return None
        grad = rhs - gram @ w - eps * w
        if float(np.abs(grad).max(initial=0.0)) > 1e-6 * scale:
            return None
        return w

    weights = solve(ridge_eps)
    used_fallback = False
    if weights is None:
        eps = max(ridge_eps, _FALLBACK_RIDGE)
        weights = solve(eps)
        if weights is None:
            # Scale the ridge up until the system is solvable.
            while weights is None and eps < 1.0:
                eps *= 10.0
                weights = solve(eps)
            if weights is None:
                raise LeafFitError("linear fit failed even with ridge regularization")
        ridge_eps = eps
        used_fallback = True
    intercept = float(y_mean - x_mean @ weights)
    weights = weights.copy()
    weights.setflags(write=False)
    return LinearModel(weights=weights, intercept=intercept,
                       ridge_eps=float(ridge_eps), used_fallback=used_fallback)


# ---------------------------------------------------------------------------
# Gaussian process with composite linear + RBF kernel


@dataclass(frozen=True)
class KernelParams:
    """k(x, x') = linear_variance*(x.x') + rbf_variance*exp(-|x-x'|^2 / (2 l^2))."""

    linear_variance: float
    rbf_variance: float
    rbf_lengthscale: float
    noise_variance: float

    def __post_init__(self):
        for name in ("linear_variance", "rbf_variance", "rbf_lengthscale", "noise_variance"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite real, got {v!r}")

    def to_log(self) -> np.ndarray:
        return np.log([self.linear_variance, self.rbf_variance,
                       self.rbf_lengthscale, self.noise_variance])

    @staticmethod
    def from_log(z: np.ndarray) -> "KernelParams":
        v = np.exp(np.asarray(z, dtype=np.float64))
        return KernelParams(linear_variance=float(v[0]), rbf_variance=float(v[1]),
                            rbf_lengthscale=float(v[2]), noise_variance=float(v[3]))


_CHUNK = 256


def _linear_cross(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise dot products, chunked broadcast form (batch-size invariant)."""
    out = np.empty((A.shape[0], B.shape[0]), dtype=np.float64)
    for s in range(0, A.shape[0], _CHUNK):
        blk = A[s:s + _CHUNK]
        out[s:s + _CHUNK] = (blk[:, None, :] * B[None, :, :]).sum(axis=2)
    return out


def _sqdist_cross(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, chunked broadcast form."""
    out = np.empty((A.shape[0], B.shape[0]), dtype=np.float64)
    for s in range(0, A.shape[0], _CHUNK):
        blk = A[s:s + _CHUNK]
        diff = blk[:, None, :] - B[None, :, :]
        out[s:s + _CHUNK] = (diff * diff).sum(axis=2)
    return out


def _combine(gram: np.ndarray, sqdist: np.ndarray, params: KernelParams) -> np.ndarray:
    ell2 = params.rbf_lengthscale * params.rbf_lengthscale
    return params.linear_variance * gram + params.rbf_variance * np.exp(sqdist * (-0.5 / ell2))


def kernel_matrix(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Kernel cross-matrix: entry (i, j) = k(A_i, B_j)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError("A and B must be 2-D with the same number of columns")
    return _combine(_linear_cross(A, B), _sqdist_cross(A, B), params)


_JITTER_LADDER = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


def _factorize(K: np.ndarray, noise_variance: float) -> tuple[np.ndarray, float]:
    """Cholesky of K + (noise + jitter) I, escalating jitter until it works."""
    m = K.shape[0]
    diag = np.arange(m)
    Kn = K.copy()
    for jitter in _JITTER_LADDER:
        Kn[diag, diag] = K[diag, diag] + noise_variance + jitter
        try:
            return np.linalg.cholesky(Kn), jitter
        except np.linalg.LinAlgError:
            continue
    raise LeafFitError(
        f"covariance factorization failed at jitter {_JITTER_LADDER[-1]:g} "
        f"(m={m}); leaf is numerically ill-conditioned")


def _lml_terms(params: KernelParams, gram: np.ndarray, sqdist: np.ndarray,
               y: np.ndarray):
    """Log marginal likelihood, its log-space gradient, and solve artifacts."""
    m = y.shape[0]
    K = _combine(gram, sqdist, params)
    L, jitter = _factorize(K, params.noise_variance)
    alpha = scipy.linalg.cho_solve((L, True), y, check_finite=False)
    value = float(-0.5 * (y @ alpha) - np.log(np.diag(L)).sum()
                  - 0.5 * m * math.log(2.0 * math.pi))

    Kinv = scipy.linalg.cho_solve((L, True), np.eye(m), check_finite=False)
    ell2 = params.rbf_lengthscale * params.rbf_lengthscale
    K_lin = params.linear_variance * gram
    K_rbf = params.rbf_variance * np.exp(sqdist * (-0.5 / ell2))

    def direction(dK: np.ndarray) -> float:
        return 0.5 * float(alpha @ (dK @ alpha) - (Kinv * dK).sum())

    grad = np.array([
        direction(K_lin),                       # d/d log linear_variance
        direction(K_rbf),                       # d/d log rbf_variance
        direction(K_rbf * (sqdist / ell2)),     # d/d log rbf_lengthscale
        0.5 * params.noise_variance * float(alpha @ alpha - np.trace(Kinv)),
    ])
    return value, grad, L, alpha, jitter


def log_marginal_likelihood(params: KernelParams, X: np.ndarray,
                            y: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and log-parameter-space gradient of the GP log marginal likelihood.

    value = -1/2 y^T alpha - sum(log diag L) - m/2 log(2 pi) with
    L L^T = K + noise I; the gradient entries follow the trace identity
    d LML / d theta = 1/2 (alpha^T dK alpha - tr(K^-1 dK)) with dK taken
    with respect to each log-parameter, in KernelParams field order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D and y 1-D with matching row counts")
    value, grad, _, _, _ = _lml_terms(params, _linear_cross(X, X), _sqdist_cross(X, X), y)
    return value, grad


@dataclass
class GPModel:
    params: KernelParams
    training_inputs: np.ndarray  # m x d, standardized by the caller
    alpha: np.ndarray            # (K + noise I)^-1 (y - y_mean)
    chol_factor: np.ndarray      # lower-triangular L with L L^T = K + noise I (+ jitter)
    y_mean: float
    jitter: float
    log_marginal: float
    n_iterations: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        return gp_predict_mean_batch(self, X)


# Optimization runs in log-space; these bounds only stop the line search
# from wandering into overflow or a hopelessly singular noise floor.
_LOG_LOWER = math.log(1e-10)
_LOG_UPPER = math.log(1e8)
_NOISE_LOG_LOWER = math.log(1e-8)


def fit_gp(X: np.ndarray, y: np.ndarray, init: KernelParams,
           max_iters: int = 100) -> GPModel:
    """Fit the composite-kernel GP by maximizing log marginal likelihood.

    Quasi-Newton (L-BFGS-B) ascent over the four log-parameters, stopping
    when the projected gradient max-norm drops below 1e-5 or after
    max_iters steps. The returned model never has a lower marginal
    likelihood than the initial parameters; with max_iters=0 the initial
    parameters are used as-is. The response is centered internally and the
    mean re-added at prediction time.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D and y 1-D with matching row counts")
    m = X.shape[0]
    if m < 2:
        raise LeafFitError(f"need at least 2 rows to fit a GP, got {m}")
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")

    y_mean = float(y.mean())
    yc = y - y_mean
    gram = _linear_cross(X, X)
    sqdist = _sqdist_cross(X, X)

    value0, _, _, _, _ = _lml_terms(init, gram, sqdist, yc)

    n_iterations = 0
    best = init
    if max_iters > 0:
        def objective(z: np.ndarray):
            try:
                value, grad, _, _, _ = _lml_terms(KernelParams.from_log(z), gram, sqdist, yc)
            except LeafFitError:
                return 1e25, np.zeros(4)
            return -value, -grad

        bounds = [(_LOG_LOWER, _LOG_UPPER)] * 3 + [(_NOISE_LOG_LOWER, _LOG_UPPER)]
        z0 = np.clip(init.to_log(), [b[0] for b in bounds], [b[1] for b in bounds])
        result = scipy.optimize.minimize(
            objective, z0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": max_iters, "gtol": 1e-5})
        n_iterations = int(result.nit)
        candidate = KernelParams.from_log(result.x)
        try:
            value1, _, _, _, _ = _lml_terms(candidate, gram, sqdist, yc)
        except LeafFitError:
            value1 = -np.inf
        if value1 >= value0:
            best = candidate

    value, _, L, alpha, jitter = _lml_terms(best, gram, sqdist, yc)
    inputs = np.array(X, dtype=np.float64, copy=True)
    inputs.setflags(write=False)
    alpha = alpha.copy()
    alpha.setflags(write=False)
    return GPModel(params=best, training_inputs=inputs, alpha=alpha,
                   chol_factor=L, y_mean=y_mean, jitter=float(jitter),
                   log_marginal=value, n_iterations=n_iterations)


def gp_predict_mean_batch(model: GPModel, X: np.ndarray) -> np.ndarray:
    """Posterior mean for each query row: k(x, X_train) . alpha + y_mean.

    Written as chunked elementwise reductions so the result for any given
    row does not depend on how many other rows are in the batch.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.training_inputs.shape[1]:
        raise ValueError(f"expected a matrix with {model.training_inputs.shape[1]} columns")
    out = np.empty(X.shape[0], dtype=np.float64)
    for s in range(0, X.shape[0], _CHUNK):
        blk = X[s:s + _CHUNK]
        K = kernel_matrix(model.params, blk, model.training_inputs)
        out[s:s + _CHUNK] = (K * model.alpha).sum(axis=1) + model.y_mean
    return out


def gp_predict(model: GPModel, x: np.ndarray) -> tuple[float, float]:
    """Posterior mean and variance at a single point.

    The mean goes through the same code path as batch prediction (a one-row
    batch). The variance is k(x,x) - |L^-1 k(X,x)|^2, clamped at zero.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.training_inputs.shape[1]:
        raise ValueError(f"expected {model.training_inputs.shape[1]} feature values")
    row = x[None, :]
    mean = float(gp_predict_mean_batch(model, row)[0])
    k_star = kernel_matrix(model.params, model.training_inputs, row)[:, 0]
    z = scipy.linalg.solve_triangular(model.chol_factor, k_star, lower=True,
                                      check_finite=False)
    k_self = float(kernel_matrix(model.params, row, row)[0, 0])
    variance = max(k_self - float(z @ z), 0.0)
    return mean, variance


LeafModel = ConstantModel | LinearModel | GPModel
