"""Linear Kalman filter and the steady-state (DARE) filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_vector, solve_spd, symmetrize
from .errors import ContractError, DivergenceError

PREDICTED = "predicted"
UPDATED = "updated"


@dataclass(frozen=True)
class Estimate:
    """State estimate ``(mean, cov)`` at time index ``k``.

    ``cov`` is ``None`` when a filter was asked to skip covariance tracking.
    """

    mean: np.ndarray
    cov: np.ndarray | None
    kind: str = UPDATED
    k: int = 0

    def __post_init__(self):
        mean = as_vector(self.mean, "mean").copy()
        object.__setattr__(self, "mean", mean)
        if self.cov is not None:
            cov = symmetrize(np.asarray(self.cov, dtype=float).reshape(len(mean), len(mean)))
            object.__setattr__(self, "cov", cov)
        if self.kind not in (PREDICTED, UPDATED):
            raise ContractError(f"unknown estimate kind {self.kind!r}")

    @property
    def has_cov(self):
        return self.cov is not None

    def std(self):
        """Marginal standard deviations (NaN when covariance is absent)."""
        if self.cov is None:
            return np.full(len(self.mean), np.nan)
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass(frozen=True)
class InnovationReport:
    """By-products of a measurement update."""

    y_pred: np.ndarray
    innovation: np.ndarray
    Py: np.ndarray
    Pxy: np.ndarray
    gain: np.ndarray


def gaussian_update(x_pred, P_pred, y_pred, Py, Pxy, y, k=0, jitter=False):
    """Condition a predicted joint Gaussian of ``(x, y)`` on the measurement ``y``.

    Shared by every Kalman-type filter: only the way ``y_pred``, ``Py`` and
    ``Pxy`` are obtained differs between them.
    """
    y = as_vector(y, "y")
    if len(y) != len(y_pred):
        raise ContractError(f"measurement has length {len(y)}, expected {len(y_pred)}")
    K = solve_spd(Py, Pxy.T, jitter=jitter).T
    innovation = y - y_pred
    mean = x_pred + K @ innovation
    cov = symmetrize(P_pred - K @ Pxy.T)
    if not np.all(np.isfinite(mean)):
        raise DivergenceError(f"updated mean is not finite at step {k}", step=k)
    report = InnovationReport(y_pred, innovation, symmetrize(Py), Pxy, K)
    return Estimate(mean, cov, UPDATED, k), report


def kf_predict(e, m):
    """Time update ``x- = F x``, ``P- = F P F' + Q``."""
    if len(e.mean) != m.n_x:
        raise ContractError(f"estimate has dimension {len(e.mean)}, model has {m.n_x}")
    F = m.F
    return Estimate(F @ e.mean, F @ e.cov @ F.T + m.Q, PREDICTED, e.k + 1)


def kf_update(e, m, y):
    """Measurement update; returns the updated estimate and the innovation report."""
    H = m.H
    Pxy = e.cov @ H.T
    Py = H @ e.cov @ H.T + m.R
    return gaussian_update(e.mean, e.cov, H @ e.mean, Py, Pxy, y, e.k)


def solve_dare(m, tol=1e-12, max_iter=100_000):
    """Stationary prediction covariance of the Riccati recursion.

    Iterates ``X <- F X F' - F X H' (H X H' + R)^-1 H X F' + Q`` from
    ``X = Q`` until successive iterates differ by less than ``tol`` in the
    max-row-sum norm.  Detectability of ``(F, H)`` and stabilizability of
    ``(F, Q^1/2)`` are assumed, not checked: when they fail the iteration
    does not settle and ``DivergenceError`` is raised.
    """
    F, H, Q, R = m.F, m.H, m.Q, m.R
    X = Q.copy()
    for _ in range(int(max_iter)):
        S = H @ X @ H.T + R
        G = solve_spd(S, H @ X @ F.T)
        X_next = symmetrize(F @ X @ F.T - F @ X @ H.T @ G + Q)
        if not np.all(np.isfinite(X_next)):
            raise DivergenceError("Riccati iteration produced non-finite values")
        delta = np.abs(X_next - X).sum(axis=1).max()
        X = X_next
        if delta < tol:
            return X
    raise DivergenceError(f"Riccati iteration did not converge in {max_iter} iterations")


def dare_residual(m, X):
    """Max-row-sum norm of the DARE residual at ``X``."""
    F, H, Q, R = m.F, m.H, m.Q, m.R
    S = H @ X @ H.T + R
    rhs = F @ X @ F.T - F @ X @ H.T @ solve_spd(S, H @ X @ F.T) + Q
    return np.abs(rhs - X).sum(axis=1).max()


@dataclass(frozen=True)
class SteadyStateFilter:
    """Fixed-gain filter built from the DARE solution.

    ``X`` is the stationary prediction covariance, ``gain`` the matching
    Kalman gain and ``P_updated`` the stationary filtering covariance.
    """

    model: object
    X: np.ndarray
    gain: np.ndarray
    P_updated: np.ndarray

    def predict(self, e):
        return Estimate(self.model.F @ e.mean, self.X, PREDICTED, e.k + 1)

    def update(self, e, y):
        y = as_vector(y, "y")
        mean = e.mean + self.gain @ (y - self.model.H @ e.mean)
        return Estimate(mean, self.P_updated, UPDATED, e.k)

    def step(self, e, y):
        return self.update(self.predict(e), y)


def steady_state_filter(m, tol=1e-12, max_iter=100_000):
    X = solve_dare(m, tol, max_iter)
    H = m.H
    Pxy = X @ H.T
    gain = solve_spd(H @ X @ H.T + m.R, Pxy.T).T
    return SteadyStateFilter(m, X, gain, symmetrize(X - gain @ Pxy.T))


class KalmanFilter:
    """Recursive linear KF over a :class:`~bayesest.model.LinearModel`."""

    name = "KF"

    def __init__(self, model, prior):
        self.model = model
        self.estimate = prior
        self.last_report = None

    def step(self, y, k=None, u=None):
        pred = kf_predict(self.estimate, self.model)
        if k is not None:
            pred = Estimate(pred.mean, pred.cov, PREDICTED, k)
        self.estimate, self.last_report = kf_update(pred, self.model, y)
        return self.estimate

