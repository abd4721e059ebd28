"""Exact Gaussian-process regression with a zero prior mean.

The model is ``y = f(X) + eps`` with ``f ~ GP(0, k)`` and
``eps ~ N(0, noise_variance I)``. All linear algebra goes through one
jittered Cholesky factor of ``A = K + noise_variance I``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf, dpotri

from .errors import ConditioningError, DataError
from .kernels import contract_grad, cov_matrix, forward, pack, param_count, unpack

JITTER_START = 1e-9
JITTER_MAX = 1e-3
_JITTER_STEPS = [JITTER_START * 10.0 ** k for k in range(7)]
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Training inputs ``X`` (n x D) and targets ``y``.

    ``y_shift`` / ``y_scale`` record the affine map applied to the targets,
    so that original units are ``y * y_scale + y_shift``.
    """

    X: np.ndarray
    y: np.ndarray
    y_shift: float = 0.0
    y_scale: float = 1.0
    source: Optional[str] = None
    columns: tuple = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"X has shape {X.shape} but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains NaN or infinite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def D(self):
        return self.X.shape[1]

    def standardized(self):
        """Targets rescaled to zero mean and unit standard deviation."""
        y = self.y * self.y_scale + self.y_shift
        shift = float(np.mean(y)) if y.size else 0.0
        scale = float(np.std(y)) if y.size else 1.0
        if not scale > 0:
            scale = 1.0
        return replace(self, y=(y - shift) / scale, y_shift=shift, y_scale=scale)

    def to_original(self, values):
        return np.asarray(values) * self.y_scale + self.y_shift

    def subset(self, idx):
        return replace(self, X=self.X[idx], y=self.y[idx])


@dataclass(frozen=True)
class GpModel:
    kernel: object
    noise_variance: float

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError(f"noise variance must be positive, got {self.noise_variance}")

    def pack(self):
        """Kernel parameters followed by log noise variance."""
        return np.append(pack(self.kernel), math.log(self.noise_variance))

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        return GpModel(unpack(self.kernel, theta[:-1]), math.exp(theta[-1]))

    @property
    def n_params(self):
        return param_count(self.kernel) + 1


class Factor(NamedTuple):
    L: np.ndarray       # lower Cholesky factor of A + jitter I
    jitter: float       # absolute value added to the diagonal
    eps: float          # relative jitter level that succeeded


def jittered_cholesky(A, expr=None):
    """Cholesky of ``A + eps * mean(diag(A)) I`` for the first eps in
    1e-9, 1e-8, ..., 1e-3 that factorizes."""
    if not np.all(np.isfinite(A)):
        raise ConditioningError("covariance matrix has non-finite entries", expr)
    n = A.shape[0]
    if n == 0:
        return Factor(np.zeros((0, 0)), 0.0, 0.0)
    scale = float(np.mean(np.diag(A)))
    if not scale > 0:
        raise ConditioningError(f"covariance diagonal has non-positive mean {scale}", expr)
    for eps in _JITTER_STEPS:
        jitter = eps * scale
        M = A.copy()
        M[np.diag_indices(n)] += jitter
        L, info = dpotrf(M, lower=1, clean=1, overwrite_a=1)
        if info == 0:
            return Factor(L, jitter, eps)
    raise ConditioningError(
        f"Cholesky failed with jitter up to {JITTER_MAX:g} x mean diagonal", expr)


def _factor_model(model, data):
    K = cov_matrix(model.kernel, data.X)
    K[np.diag_indices(data.n)] += model.noise_variance
    return jittered_cholesky(K, model.kernel), K


def log_marginal_likelihood(model, data, grad=True):
    """``log N(y; 0, K + noise I)`` and its gradient over ``model.pack()``.

    The gradient accounts for the jitter term, which scales with the mean
    diagonal, so it is exact for the matrix actually factorized.
    """
    n = data.n
    y = data.y
    if not grad:
        factor, _ = _factor_model(model, data)
        alpha = cho_solve((factor.L, True), y)
        return (-0.5 * y @ alpha - np.sum(np.log(np.diag(factor.L)))
                - 0.5 * n * _LOG_2PI)
    tree = forward(model.kernel, data.X)
    K = tree[0].copy()
    sn2 = model.noise_variance
    K[np.diag_indices(n)] += sn2
    factor = jittered_cholesky(K, model.kernel)
    L = factor.L
    alpha = cho_solve((L, True), y)
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG_2PI
    Ainv, info = dpotri(L, lower=1)
    if info != 0:
        raise ConditioningError("inverse from Cholesky factor failed", model.kernel)
    # dpotri fills the lower triangle only; the contraction needs just the
    # symmetric part of W, so subtract twice the strict lower triangle
    W = np.outer(alpha, alpha)
    W -= 2.0 * Ainv
    W[np.diag_indices(n)] += np.diag(Ainv)
    trW = np.trace(W)
    # jitter is eps * mean(diag(A)); its derivative folds into the diagonal weight
    W[np.diag_indices(n)] += factor.eps * trW / n
    g = np.append(0.5 * contract_grad(model.kernel, tree, data.X, W),
                  0.5 * sn2 * (1.0 + factor.eps) * trW)
    return value, g


@dataclass
class PosteriorPrediction:
    mean: np.ndarray
    variance: np.ndarray
    cov: Optional[np.ndarray] = None


def posterior_predict(model, data, Xstar, full_cov=False, include_noise=False):
    """Predictive mean and variance of the latent function at ``Xstar``.

    With ``include_noise`` the observation noise variance is added.
    An empty training set gives the prior.
    """
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.ndim == 1:
        Xstar = Xstar[:, None]
    m = Xstar.shape[0]
    if m == 0:
        return PosteriorPrediction(np.zeros(0), np.zeros(0),
                                   np.zeros((0, 0)) if full_cov else None)
    Kss = cov_matrix(model.kernel, Xstar)
    if data.n == 0:
        mean = np.zeros(m)
        cov = Kss
    else:
        factor, _ = _factor_model(model, data)
        Ks = cov_matrix(model.kernel, Xstar, data.X)
        alpha = cho_solve((factor.L, True), data.y)
        mean = Ks @ alpha
        V = solve_triangular(factor.L, Ks.T, lower=True)
        cov = Kss - V.T @ V
        cov = 0.5 * (cov + cov.T)
    if include_noise:
        cov = cov + model.noise_variance * np.eye(m)
    var = np.diag(cov).copy()
    var[var < 0] = 0.0
    return PosteriorPrediction(mean, var, cov if full_cov else None)
