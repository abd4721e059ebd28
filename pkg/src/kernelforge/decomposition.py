"""Posterior decomposition of an additive GP into its summands.

The fitted kernel is expanded into a sum of products; each product is one
component ``f_i ~ GP(mu_i, k_i)``. Observation noise is an extra component
with covariance ``(noise + jitter) I`` on the training inputs and zero
covariance with any query point, so the components add up to exactly the
matrix that was factorized.

Given ``A = sum_i K_i`` (noise included), the conditional moments at query
points are::

    mean_i     = mu_i* + K_i(X*, X) A^-1 (y - sum_j mu_j)
    cov_i      = K_i(X*, X*) - K_i(X*, X) A^-1 K_i(X, X*)
    cross_ij   = -K_i(X*, X) A^-1 K_j(X, X*)          (i != j)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .gp import _factor_model
from .kernels import Sum, canonical_string, cov_matrix, to_sum_of_products

NOISE_LABEL = "NOISE"


def components(kernel):
    """Product terms of the kernel's sum-of-products form, in canonical order."""
    sop = to_sum_of_products(kernel)
    return list(sop.children) if isinstance(sop, Sum) else [sop]


@dataclass
class ComponentPosterior:
    labels: List[str]
    exprs: list                     # None for the noise component
    means: List[np.ndarray]
    covs: List[np.ndarray]
    cross: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    def total_mean(self):
        return np.sum(self.means, axis=0)

    def total_cov(self):
        out = np.sum(self.covs, axis=0)
        for (i, j), C in self.cross.items():
            if i != j:
                out = out + C
        return out

    def variance(self, i):
        v = np.diag(self.covs[i]).copy()
        v[v < 0] = 0.0
        return v


def component_matrices(model, X):
    """Training covariance of every component, noise last (no jitter)."""
    mats = [cov_matrix(c, X) for c in components(model.kernel)]
    mats.append(model.noise_variance * np.eye(np.asarray(X).shape[0]))
    return mats


def decompose_posterior(model, data, Xstar, prior_means=None, noise=True):
    """Conditional mean, covariance and pairwise cross-covariance of every
    additive component at ``Xstar`` given the training targets.

    ``prior_means`` optionally gives ``(mu_train, mu_star)`` arrays per signal
    component; by default all components have zero mean. The noise component
    is appended last unless ``noise`` is false.
    """
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.ndim == 1:
        Xstar = Xstar[:, None]
    m = Xstar.shape[0]
    comps = components(model.kernel)
    factor, _ = _factor_model(model, data)
    L = factor.L

    resid = data.y.copy()
    if prior_means is not None:
        if len(prior_means) != len(comps):
            raise ValueError(f"got {len(prior_means)} prior means for {len(comps)} components")
        for mu_train, _ in prior_means:
            resid = resid - np.asarray(mu_train, dtype=float)
    alpha = cho_solve((L, True), resid)

    means, covs, Vs = [], [], []
    for i, comp in enumerate(comps):
        Ks = cov_matrix(comp, Xstar, data.X)
        mean = Ks @ alpha
        if prior_means is not None:
            mean = mean + np.asarray(prior_means[i][1], dtype=float)
        V = solve_triangular(L, Ks.T, lower=True)
        C = cov_matrix(comp, Xstar) - V.T @ V
        means.append(mean)
        covs.append(0.5 * (C + C.T))
        Vs.append(V)

    labels = [canonical_string(c) for c in comps]
    exprs = list(comps)
    cross = {}
    for i in range(len(comps)):
        for j in range(i + 1, len(comps)):
            C = -Vs[i].T @ Vs[j]
            cross[(i, j)] = C
            cross[(j, i)] = C.T
    if noise:
        # query points are never training points: zero prior covariance
        k = len(comps)
        labels.append(NOISE_LABEL)
        exprs.append(None)
        means.append(np.zeros(m))
        covs.append(np.zeros((m, m)))
        for i in range(k):
            cross[(i, k)] = np.zeros((m, m))
            cross[(k, i)] = np.zeros((m, m))
    return ComponentPosterior(labels, exprs, means, covs, cross)


def training_component_means(model, data):
    """Posterior mean of each component at the training inputs, noise last.

    The noise component here is the jittered diagonal that was factorized,
    so the means sum to ``y`` up to round-off.
    """
    comps = components(model.kernel)
    factor, _ = _factor_model(model, data)
    alpha = cho_solve((factor.L, True), data.y)
    means = [cov_matrix(c, data.X) @ alpha for c in comps]
    means.append((model.noise_variance + factor.jitter) * alpha)
    return means


def residuals(model, data):
    """``y`` minus the posterior means of all signal components."""
    means = training_component_means(model, data)
    return data.y - np.sum(means[:-1], axis=0)
