"""Deterministic-sampling Gaussian filters: UKF, CKF and Gauss-Hermite KF.

All three approximate the prediction and update integrals of the Gaussian
filter by a weighted point set.  They differ only in how the points and
weights are chosen, so they share ``point_predict``/``point_update``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import matrix_sqrt, symmetrize
from .errors import (
    CapacityError,
    NumericalSingularityError,
    ParameterError,
    TransformError,
)
from .kalman import PREDICTED, Estimate, gaussian_update

#: Largest tensor-product quadrature the GHKF will build.
MAX_QUADRATURE_POINTS = 1_000_000


@dataclass(frozen=True)
class UtParams:
    """Scaling of the unscented transform.

    ``alpha`` sets the spread, ``beta`` folds in prior knowledge of the
    distribution (2 is optimal for Gaussians) and ``kappa`` is the secondary
    scale, commonly 0 or ``3 - n``.
    """

    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def lam(self, n):
        return self.alpha**2 * (n + self.kappa) - n


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray  # (2n+1, n)
    Wm: np.ndarray
    Wc: np.ndarray


def ut_weights(n, p):
    """Mean and covariance weights for ``2n + 1`` sigma points."""
    lam = p.lam(n)
    if not n + lam > 0:
        raise ParameterError(f"n + lambda = {n + lam:.3g} must be positive")
    Wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    Wc = Wm.copy()
    Wm[0] = lam / (n + lam)
    Wc[0] = Wm[0] + (1.0 - p.alpha**2 + p.beta)
    return Wm, Wc


def sigma_points(g, p):
    """Sigma points of ``g`` (anything with ``mean`` and ``cov``)."""
    mean = np.asarray(g.mean, dtype=float)
    n = len(mean)
    Wm, Wc = ut_weights(n, p)
    L = matrix_sqrt(np.asarray(g.cov, dtype=float))
    spread = math.sqrt(n + p.lam(n)) * L.T  # row i is the scaled column i
    points = np.vstack([mean, mean + spread, mean - spread])
    return SigmaPointSet(points, Wm, Wc)


def weighted_moments(Z, Wm, Wc):
    """Weighted mean and covariance of the rows of ``Z``."""
    mean = Wm @ Z
    D = Z - mean
    return mean, symmetrize((D.T * Wc) @ D)


def _apply(g, X, vectorized):
    if vectorized:
        Z = np.asarray(g(X), dtype=float)
        Z = Z.reshape(len(X), -1)
    else:
        Z = np.array([np.atleast_1d(g(x)) for x in X], dtype=float)
    if not np.all(np.isfinite(Z)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(Z), axis=1))[0])
        raise TransformError(f"map returned non-finite values at point {bad}")
    return Z


def unscented_transform(s, g, vectorized=False):
    """Mean and covariance of ``g(x)`` from the sigma set ``s``.

    Returns ``(mean, cov, Z)`` with ``Z`` the transformed points, one per row.
    """
    Z = _apply(g, s.points, vectorized)
    mean, cov = weighted_moments(Z, s.Wm, s.Wc)
    return mean, cov, Z


def point_predict(e, m, X, Wm, Wc, u=None):
    """Gaussian-filter time update from points ``X`` drawn around ``e``."""
    Z = _apply(lambda P: m.transition_batch(P, e.k, u), X, True)
    mean, cov = weighted_moments(Z, Wm, Wc)
    return Estimate(mean, cov + m.Q, PREDICTED, e.k + 1)


def point_update(e, m, X, Wm, Wc, y):
    """Gaussian-filter measurement update from points ``X`` drawn around ``e``."""
    Y = _apply(lambda P: m.measure_batch(P, e.k), X, True)
    y_pred, Py = weighted_moments(Y, Wm, Wc)
    Pxy = ((X - e.mean).T * Wc) @ (Y - y_pred)
    return gaussian_update(e.mean, e.cov, y_pred, Py + m.R, Pxy, y, e.k)


def ukf_predict(e, m, p, u=None):
    s = sigma_points(e, p)
    return point_predict(e, m, s.points, s.Wm, s.Wc, u)


def ukf_update(e, m, p, y):
    s = sigma_points(e, p)
    return point_update(e, m, s.points, s.Wm, s.Wc, y)


def ckf_params(n):
    """UT scaling that reproduces the third-degree cubature rule.

    With ``alpha=1, beta=0, kappa=0`` the centre weight vanishes and the
    ``2n`` remaining points sit at ``mean +/- sqrt(n) * sqrt(P)_i`` with
    weight ``1/(2n)`` each.
    """
    if n < 1:
        raise ParameterError("cubature rule needs n >= 1")
    return UtParams(alpha=1.0, beta=0.0, kappa=0.0)


class UnscentedKalmanFilter:
    name = "UKF"

    def __init__(self, model, prior, params=None):
        self.model = model
        self.params = UtParams() if params is None else params
        self.estimate = prior
        self.last_report = None

    def step(self, y, k=None, u=None):
        pred = ukf_predict(self.estimate, self.model, self.params, u)
        if k is not None:
            pred = Estimate(pred.mean, pred.cov, PREDICTED, k)
        self.estimate, self.last_report = ukf_update(pred, self.model, self.params, y)
        return self.estimate


def CubatureKalmanFilter(model, prior):
    """UKF running with :func:`ckf_params`."""
    f = UnscentedKalmanFilter(model, prior, ckf_params(model.n_x))
    f.name = "CKF"
    return f


# --- Gauss-Hermite quadrature -------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """One-dimensional Gauss-Hermite rule against ``N(0, 1)``.

    ``nodes``/``weights`` are already rescaled to the standard normal, so the
    weights sum to one.  ``physicist_nodes``/``physicist_weights`` are the
    raw rule for the weight function ``exp(-x**2)``.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray
    physicist_nodes: np.ndarray
    physicist_weights: np.ndarray

    def point_count(self, n):
        return self.order**n

    def tensor(self, n):
        """Tensor-product nodes ``(m**n, n)`` and weights for ``N(0, I_n)``."""
        count = self.order**n
        if count > MAX_QUADRATURE_POINTS:
            raise CapacityError(f"{self.order}^{n} = {count} quadrature points exceed the budget")
        grid = np.array(list(itertools.product(range(self.order), repeat=n)), dtype=int).reshape(count, n)
        return self.nodes[grid], np.prod(self.weights[grid], axis=1)


def hermite_poly(m, x):
    """Physicists' Hermite polynomial ``H_m(x)`` by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), 2.0 * x
    if m == 0:
        return h_prev
    for j in range(1, m):
        h_prev, h = h, 2.0 * x * h - 2.0 * j * h_prev
    return h


def _hermite_roots(m, tol=4e-16, max_newton=50):
    # Golub-Welsch starting values, polished by Newton on H_m (H_m' = 2m H_{m-1})
    if m == 1:
        return np.zeros(1)
    off = np.sqrt(np.arange(1, m) / 2.0)
    x = np.linalg.eigvalsh(np.diag(off, 1) + np.diag(off, -1))
    for _ in range(max_newton):
        dx = hermite_poly(m, x) / (2.0 * m * hermite_poly(m - 1, x))
        x = x - dx
        if np.all(np.abs(dx) <= tol * np.maximum(1.0, np.abs(x))):
            break
    if not np.all(np.abs(dx) <= 1e-12 * np.maximum(1.0, np.abs(x))):
        raise NumericalSingularityError(f"Hermite root polishing did not converge for m={m}")
    x = np.sort(x)
    # enforce exact symmetry of the root set
    x = 0.5 * (x - x[::-1])
    return x


def gauss_hermite_rule(m):
    """Gauss-Hermite rule of order ``m`` (``1 <= m <= 20``) for ``N(0, 1)``.

    Roots ``x_i`` of ``H_m`` carry weights

        w_i = 2**(m-1) m! sqrt(pi) / (m**2 H_{m-1}(x_i)**2)

    for the weight ``exp(-x**2)``.  The change of variables to the standard
    normal scales the nodes by ``sqrt(2)`` and the weights by ``1/sqrt(pi)``.
    Polynomials up to degree ``2m - 1`` are integrated exactly.
    """
    m = int(m)
    if not 1 <= m <= 20:
        raise ParameterError(f"Gauss-Hermite order must be in [1, 20], got {m}")
    x = _hermite_roots(m)
    w = 2.0 ** (m - 1) * math.factorial(m) * math.sqrt(math.pi) / (m**2 * hermite_poly(m - 1, x) ** 2)
    w = 0.5 * (w + w[::-1])  # mirrored nodes carry equal weight
    nodes = math.sqrt(2.0) * x
    weights = w / math.sqrt(math.pi)
    return QuadratureRule(m, nodes, weights, x, w)


def quadrature_points(g, rule):
    """Whitened tensor-product points ``mean + L xi`` for ``g`` and their weights."""
    mean = np.asarray(g.mean, dtype=float)
    xi, w = rule.tensor(len(mean))
    L = matrix_sqrt(np.asarray(g.cov, dtype=float))
    return mean + xi @ L.T, w


def ghkf_predict(e, m, rule, u=None):
    X, w = quadrature_points(e, rule)
    return point_predict(e, m, X, w, w, u)


def ghkf_update(e, m, rule, y):
    X, w = quadrature_points(e, rule)
    return point_update(e, m, X, w, w, y)


def ghkf_step(e, m, rule, y, u=None):
    """One predict + update cycle of the Gauss-Hermite Kalman filter."""
    updated, _ = ghkf_update(ghkf_predict(e, m, rule, u), m, rule, y)
    return updated


class GaussHermiteKalmanFilter:
    name = "GHKF"

    def __init__(self, model, prior, order=3):
        self.model = model
        self.rule = gauss_hermite_rule(order)
        self.rule.tensor(model.n_x)  # fail early on the point budget
        self.estimate = prior
        self.last_report = None

    def step(self, y, k=None, u=None):
        pred = ghkf_predict(self.estimate, self.model, self.rule, u)
        if k is not None:
            pred = Estimate(pred.mean, pred.cov, PREDICTED, k)
        self.estimate, self.last_report = ghkf_update(pred, self.model, self.rule, y)
        return self.estimate
