"""Gaussian-sum filter: a bank of EKFs with likelihood-weighted mixing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Gaussian, gaussian_logpdf, symmetrize
from .ekf import ekf_predict, ekf_update
from .errors import ContractError, EstimationError
from .kalman import PREDICTED, UPDATED, Estimate
from .particle import normalize_log_weights
from .sigma import gauss_hermite_rule

PRUNE_MIN_WEIGHT = 1e-6
PRUNE_MAX_KERNELS = 64


@dataclass
class GaussianMixture:
    weights: np.ndarray  # (m,)
    means: np.ndarray  # (m, n)
    covs: np.ndarray  # (m, n, n)
    kind: str = UPDATED
    k: int = 0

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = len(self.weights)
        self.means = np.asarray(self.means, dtype=float).reshape(m, -1)
        n = self.means.shape[1]
        self.covs = np.asarray(self.covs, dtype=float).reshape(m, n, n)
        if np.any(self.weights < 0):
            raise ContractError("mixture weights must be non-negative")

    @property
    def size(self):
        return len(self.weights)

    def kernel(self, i):
        return Estimate(self.means[i], self.covs[i], self.kind, self.k)

    @classmethod
    def from_kernels(cls, weights, kernels, kind=UPDATED, k=0):
        return cls(
            weights,
            np.array([e.mean for e in kernels]),
            np.array([e.cov for e in kernels]),
            kind,
            k,
        )


def split_gaussian(g, m, spread=0.5):
    """Moment-preserving ``m``-kernel mixture of ``g``.

    Kernels sit at Gauss-Hermite nodes along the principal axis of ``g.cov``,
    weighted by the matching Gauss-Hermite weights.  A fraction ``spread`` of
    the principal variance is moved from the kernel covariances into the
    spacing of the means, so the mixture mean and covariance equal those of
    ``g`` exactly.
    """
    mean = np.asarray(g.mean, dtype=float)
    P = np.asarray(g.cov, dtype=float)
    if m == 1:
        return GaussianMixture([1.0], mean[None], P[None], UPDATED, getattr(g, "k", 0))
    lam, V = np.linalg.eigh(P)
    v, var = V[:, -1], lam[-1]
    rule = gauss_hermite_rule(m)
    d = np.sqrt(spread * var) * v
    means = mean + np.outer(rule.nodes, d)
    cov = symmetrize(P - spread * var * np.outer(v, v))
    return GaussianMixture(rule.weights, means, np.repeat(cov[None], m, axis=0), UPDATED, getattr(g, "k", 0))


def gsf_predict(mix, m, u=None):
    """EKF time update of every kernel; weights are carried over unchanged."""
    kernels = []
    for i in range(mix.size):
        try:
            kernels.append(ekf_predict(mix.kernel(i), m, u))
        except EstimationError as exc:
            raise type(exc)(f"kernel {i}: {exc}") from exc
    return GaussianMixture.from_kernels(mix.weights.copy(), kernels, PREDICTED, mix.k + 1)


def gsf_update(mix, m, y):
    """EKF measurement update per kernel, reweighted by ``N(y; y_i, Py_i)``."""
    kernels = []
    log_w = np.empty(mix.size)
    with np.errstate(divide="ignore"):
        log_prior = np.log(mix.weights)
    for i in range(mix.size):
        updated, report = ekf_update(mix.kernel(i), m, y)
        kernels.append(updated)
        log_w[i] = log_prior[i] + gaussian_logpdf(Gaussian(report.y_pred, report.Py), y)
    return GaussianMixture.from_kernels(normalize_log_weights(log_w), kernels, UPDATED, mix.k)


def gsf_estimate(mix):
    """Mixture mean and covariance (within- plus between-kernel spread)."""
    w = mix.weights
    mean = w @ mix.means
    D = mix.means - mean
    cov = np.einsum("i,ijk->jk", w, mix.covs) + (D.T * w) @ D
    return Estimate(mean, cov, mix.kind, mix.k)


def gsf_prune(mix, w_min=PRUNE_MIN_WEIGHT, m_max=PRUNE_MAX_KERNELS):
    """Drop kernels lighter than ``w_min``, keep the ``m_max`` heaviest, renormalize.

    The heaviest kernel always survives.
    """
    order = np.argsort(-mix.weights, kind="stable")
    keep = [i for i in order if mix.weights[i] >= w_min][: max(1, int(m_max))]
    if not keep:
        keep = [int(order[0])]
    keep = np.sort(np.asarray(keep))
    w = mix.weights[keep]
    return GaussianMixture(w / w.sum(), mix.means[keep], mix.covs[keep], mix.kind, mix.k)


class GaussianSumFilter:
    name = "GSF"

    def __init__(self, model, prior, kernels=1, w_min=PRUNE_MIN_WEIGHT, m_max=PRUNE_MAX_KERNELS):
        self.model = model
        self.w_min = w_min
        self.m_max = m_max
        self.mixture = prior if isinstance(prior, GaussianMixture) else split_gaussian(prior, int(kernels))
        self.estimate = gsf_estimate(self.mixture)

    def step(self, y, k=None, u=None):
        mix = gsf_predict(self.mixture, self.model, u)
        if k is not None:
            mix.k = k
        mix = gsf_update(mix, self.model, y)
        self.mixture = gsf_prune(mix, self.w_min, self.m_max)
        self.estimate = gsf_estimate(self.mixture)
        return self.estimate
