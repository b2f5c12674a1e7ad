"""Gaussian process regression with an anisotropic squared-exponential kernel.

Inputs are expected in unit-cube coordinates and targets are standardized
internally (zero mean, unit variance) before fitting; predictions are returned
on the original target scale.  Hyperparameters therefore live on the
standardized scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import DimensionMismatchError, FitFailureError, SingularKernelError

# Box bounds for the hyperparameter search, in log space.
_LOG_LENGTHSCALE_BOUNDS = (math.log(1e-2), math.log(10.0))
_LOG_SIGNAL_BOUNDS = (math.log(1e-2), math.log(10.0))
_LOG_NOISE_BOUNDS = (math.log(1e-6), math.log(1.0))

# Jitter ladder: escalate only when the factorization fails outright.
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


@dataclass(frozen=True)
class KernelHyperParams:
    """SE kernel hyperparameters: one lengthscale per input dimension."""

    signal_stddev: float
    noise_stddev: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_stddev", float(self.signal_stddev))
        object.__setattr__(self, "noise_stddev", float(self.noise_stddev))
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a non-empty 1-d array")
        if not (self.signal_stddev > 0 and self.noise_stddev > 0 and np.all(ls > 0)):
            raise ValueError("kernel hyperparameters must be strictly positive")

    @property
    def dim(self) -> int:
        return self.lengthscales.size


@dataclass(frozen=True)
class Dataset:
    """Observed design points with objective and constraint values.

    ``X`` holds N points in unit-cube coordinates, ``y`` the N objective
    observations and ``C`` an (N, n_constraints) matrix of constraint values
    (zero columns for unconstrained runs).  ``bounds`` keeps the original
    per-dimension (lower, upper) box so points can be de-normalized.
    """

    X: np.ndarray
    y: np.ndarray
    C: np.ndarray
    bounds: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        C = np.asarray(self.C, dtype=float)
        if C.size == 0:
            C = np.zeros((X.shape[0], 0))
        C = np.atleast_2d(C)
        lower = np.atleast_1d(np.asarray(self.bounds[0], dtype=float))
        upper = np.atleast_1d(np.asarray(self.bounds[1], dtype=float))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "bounds", (lower, upper))
        if X.min(initial=0.0) < -1e-12 or X.max(initial=1.0) > 1 + 1e-12:
            raise ValueError("design points must lie in the unit cube")
        if y.shape[0] != X.shape[0] or C.shape[0] != X.shape[0]:
            raise DimensionMismatchError("y and C must have one row per design point")
        if lower.shape != (X.shape[1],) or upper.shape != (X.shape[1],):
            raise DimensionMismatchError("bounds must give one (lower, upper) pair per dimension")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.C.shape[1]

    def feasible_mask(self) -> np.ndarray:
        """True where every constraint value is strictly below zero."""
        return np.all(self.C < 0, axis=1)

    def extended(self, X_new, y_new, C_new=None) -> "Dataset":
        """Return a new dataset with the given observations appended."""
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        y_new = np.atleast_1d(np.asarray(y_new, dtype=float))
        if C_new is None:
            C_new = np.zeros((X_new.shape[0], self.n_constraints))
        C_new = np.atleast_2d(np.asarray(C_new, dtype=float))
        return Dataset(
            np.vstack([self.X, X_new]),
            np.concatenate([self.y, y_new]),
            np.vstack([self.C, C_new]),
            self.bounds,
        )


@dataclass(frozen=True)
class GpModel:
    """Trained GP with a cached Cholesky factor for cheap posterior queries.

    ``alpha`` solves (K + noise^2 I) alpha = y_standardized and ``chol_lower``
    is the lower-triangular factor of K + noise^2 I (+ any jitter applied).
    ``y_mean``/``y_scale`` are the standardization constants for the targets.
    """

    hyperparams: KernelHyperParams
    X: np.ndarray
    alpha: np.ndarray
    chol_lower: np.ndarray
    y_mean: float
    y_scale: float
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def kernel_se(x_i, x_j, hyp: KernelHyperParams) -> float:
    """Squared-exponential covariance between two points.

    k(x, x') = signal^2 * exp(-0.5 * sum_k ((x_k - x'_k) / l_k)^2)
    """
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    x_j = np.atleast_1d(np.asarray(x_j, dtype=float))
    if x_i.shape != x_j.shape or x_i.shape[-1] != hyp.dim:
        raise DimensionMismatchError(
            f"points of dimension {x_i.shape[-1]}/{x_j.shape[-1]} vs {hyp.dim} lengthscales"
        )
    z = (x_i - x_j) / hyp.lengthscales
    return float(hyp.signal_stddev**2 * np.exp(-0.5 * np.dot(z, z)))


def kernel_matrix(X1: np.ndarray, X2: np.ndarray, hyp: KernelHyperParams) -> np.ndarray:
    """Cross-covariance matrix k(X1, X2) under the SE kernel."""
    A = np.atleast_2d(X1) / hyp.lengthscales
    B = np.atleast_2d(X2) / hyp.lengthscales
    if A.shape[1] != hyp.dim or B.shape[1] != hyp.dim:
        raise DimensionMismatchError("point dimension does not match lengthscale count")
    sq = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.maximum(sq, 0.0, out=sq)
    return hyp.signal_stddev**2 * np.exp(-0.5 * sq)


def _chol_with_jitter(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of A, escalating the diagonal jitter on failure."""
    for jitter in _JITTERS:
        try:
            L = cholesky(A + jitter * np.eye(A.shape[0]), lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise SingularKernelError(
        f"covariance matrix is not positive definite even with jitter {_JITTERS[-1]:g}"
    )


def _standardize(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(np.mean(y))
    scale = float(np.std(y))
    if not scale > 1e-12:
        scale = 1.0
    return (y - mean) / scale, mean, scale


def log_marginal_likelihood(dataset: Dataset, hyp: KernelHyperParams) -> float:
    """GP log evidence of the standardized targets under the given hyperparameters."""
    if dataset.n < 1:
        raise ValueError("need at least one observation")
    y_std, _, _ = _standardize(dataset.y)
    K = kernel_matrix(dataset.X, dataset.X, hyp)
    K[np.diag_indices_from(K)] += hyp.noise_stddev**2
    L, _ = _chol_with_jitter(K)
    alpha = cho_solve((L, True), y_std)
    return float(
        -0.5 * y_std @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * dataset.n * math.log(2.0 * math.pi)
    )


def build_gp(dataset: Dataset, hyp: KernelHyperParams) -> GpModel:
    """Construct a model with fixed hyperparameters (no fitting)."""
    if hyp.dim != dataset.dim:
        raise DimensionMismatchError("hyperparameter dimension does not match dataset")
    y_std, y_mean, y_scale = _standardize(dataset.y)
    K = kernel_matrix(dataset.X, dataset.X, hyp)
    K[np.diag_indices_from(K)] += hyp.noise_stddev**2
    L, jitter = _chol_with_jitter(K)
    alpha = cho_solve((L, True), y_std)
    return GpModel(hyp, dataset.X.copy(), alpha, L, y_mean, y_scale, jitter)


def _neg_lml_and_grad(log_theta: np.ndarray, sqdists: np.ndarray, y_std: np.ndarray):
    """Negative log evidence and gradient w.r.t. log(signal, noise, lengthscales).

    ``sqdists`` has shape (d, N, N) holding per-dimension squared coordinate
    differences, so the kernel for any lengthscale vector is a cheap weighted sum.
    """
    n = y_std.shape[0]
    sf2 = math.exp(2.0 * log_theta[0])
    sn2 = math.exp(2.0 * log_theta[1])
    inv_l2 = np.exp(-2.0 * log_theta[2:])
    sq = np.tensordot(inv_l2, sqdists, axes=1)
    Kf = sf2 * np.exp(-0.5 * sq)
    K = Kf + sn2 * np.eye(n)
    try:
        L = cholesky(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(log_theta)
    alpha = cho_solve((L, True), y_std, check_finite=False)
    lml = -0.5 * y_std @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    # d lml / d theta_j = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta_j)
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
    grad = np.empty_like(log_theta)
    grad[0] = np.sum(W * Kf)              # dK/dlog sf = 2 Kf
    grad[1] = sn2 * np.trace(W)           # dK/dlog sn = 2 sn^2 I
    WKf = W * Kf
    for k in range(sqdists.shape[0]):     # dK/dlog l_k = Kf * sq_k / l_k^2
        grad[2 + k] = 0.5 * np.sum(WKf * (sqdists[k] * inv_l2[k]))
    return -lml, -grad


def fit_gp(dataset: Dataset, restarts: int = 10, seed: int = 0) -> GpModel:
    """Fit hyperparameters by multi-start maximization of the log evidence.

    Deterministic for a fixed seed: the first start is a fixed heuristic and the
    remaining ones are drawn log-uniformly inside the search box.
    """
    if dataset.n < 2 or np.unique(dataset.X, axis=0).shape[0] < 2:
        raise ValueError("fitting requires at least two distinct design points")
    d = dataset.dim
    y_std, _, _ = _standardize(dataset.y)
    diffs = dataset.X[:, None, :] - dataset.X[None, :, :]
    sqdists = np.ascontiguousarray(np.moveaxis(diffs**2, -1, 0))

    lo = np.array([_LOG_SIGNAL_BOUNDS[0], _LOG_NOISE_BOUNDS[0]] + [_LOG_LENGTHSCALE_BOUNDS[0]] * d)
    hi = np.array([_LOG_SIGNAL_BOUNDS[1], _LOG_NOISE_BOUNDS[1]] + [_LOG_LENGTHSCALE_BOUNDS[1]] * d)
    bounds = list(zip(lo, hi))

    rng = np.random.default_rng(seed)
    starts = [np.concatenate([[0.0, math.log(0.1)], np.full(d, math.log(0.5))])]
    for _ in range(max(0, restarts - 1)):
        starts.append(rng.uniform(lo, hi))

    best_val, best_theta = np.inf, None
    for x0 in starts:
        res = minimize(
            _neg_lml_and_grad,
            x0,
            args=(sqdists, y_std),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    if best_theta is None:
        raise FitFailureError("no restart produced a finite log evidence")

    hyp = KernelHyperParams(
        signal_stddev=math.exp(best_theta[0]),
        noise_stddev=math.exp(best_theta[1]),
        lengthscales=np.exp(best_theta[2:]),
    )
    return build_gp(dataset, hyp)


def predict(model: GpModel, x_star) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and stddev at one point (d,) or a batch (n, d).

    mean(x) = k(x, X) (K + noise^2 I)^-1 y and the variance is the prior
    variance minus the explained part, clamped at zero before the square root.
    Both outputs are de-standardized.  Scalars are returned for a single point.
    """
    x = np.asarray(x_star, dtype=float)
    single = x.ndim == 1
    X_star = np.atleast_2d(x)
    if X_star.shape[1] != model.dim:
        raise DimensionMismatchError(
            f"query dimension {X_star.shape[1]} does not match model dimension {model.dim}"
        )
    hyp = model.hyperparams
    k_star = kernel_matrix(X_star, model.X, hyp)
    mean_std = k_star @ model.alpha
    v = solve_triangular(model.chol_lower, k_star.T, lower=True, check_finite=False)
    var_std = hyp.signal_stddev**2 - np.sum(v**2, axis=0)
    np.maximum(var_std, 0.0, out=var_std)
    mean = model.y_mean + model.y_scale * mean_std
    stddev = model.y_scale * np.sqrt(var_std)
    if single:
        return float(mean[0]), float(stddev[0])
    return mean, stddev
