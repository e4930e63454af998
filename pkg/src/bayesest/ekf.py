"""Extended Kalman filter and its iterated measurement update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import solve_spd, symmetrize
from .errors import DivergenceError
from .kalman import PREDICTED, UPDATED, Estimate, InnovationReport, gaussian_update

IEKF_MAX_ITER = 10
IEKF_STEP_TOL = 1e-8


@dataclass(frozen=True)
class Linearization:
    F: np.ndarray
    H: np.ndarray


def ekf_predict(e, m, u=None):
    """Propagate the mean through ``f`` and the covariance through its Jacobian."""
    F = m.F(e.mean, e.k, u)
    mean = m.transition(e.mean, e.k, u)
    if not np.all(np.isfinite(mean)):
        raise DivergenceError(f"predicted mean is not finite at step {e.k + 1}", step=e.k + 1)
    return Estimate(mean, F @ e.cov @ F.T + m.Q, PREDICTED, e.k + 1)


def ekf_update(e, m, y):
    H = m.H(e.mean, e.k)
    Pxy = e.cov @ H.T
    Py = H @ e.cov @ H.T + m.R
    return gaussian_update(e.mean, e.cov, m.measure(e.mean, e.k), Py, Pxy, y, e.k)


def iekf_update(e, m, y, max_iter=IEKF_MAX_ITER, step_tol=IEKF_STEP_TOL):
    """Iterated EKF update (Gauss-Newton on the measurement posterior).

    The measurement map is relinearized at each iterate ``x_j``:

        x_{j+1} = x- + K_j (y - h(x_j) - H_j (x- - x_j))

    until ``|x_{j+1} - x_j| < step_tol`` or ``max_iter`` iterations.  The
    covariance is formed once, with the gain at the last linearization
    point.  With ``max_iter=1`` this is exactly :func:`ekf_update`.

    Returns the updated estimate, the final innovation report and the number
    of iterations that moved the estimate (at least 1).
    """
    x_pred, P = e.mean, e.cov
    x = x_pred
    y = np.asarray(y, dtype=float)
    iterations = 0
    for iterations in range(1, int(max_iter) + 1):
        H = m.H(x, e.k)
        Py = H @ P @ H.T + m.R
        Pxy = P @ H.T
        K = solve_spd(Py, Pxy.T).T
        y_lin = m.measure(x, e.k) + H @ (x_pred - x)
        x_next = x_pred + K @ (y - y_lin)
        if not np.all(np.isfinite(x_next)):
            raise DivergenceError(f"IEKF iterate is not finite at step {e.k}", step=e.k)
        moved = np.linalg.norm(x_next - x)
        x = x_next
        if moved < step_tol:
            # the pass that only confirms convergence is not counted
            iterations = max(1, iterations - 1)
            break
    cov = symmetrize(P - K @ Pxy.T)
    report = InnovationReport(y_lin, y - y_lin, symmetrize(Py), Pxy, K)
    return Estimate(x, cov, UPDATED, e.k), report, iterations


class ExtendedKalmanFilter:
    """Recursive EKF; ``iterated=True`` switches to the IEKF update."""

    name = "EKF"

    def __init__(self, model, prior, iterated=False, max_iter=IEKF_MAX_ITER, step_tol=IEKF_STEP_TOL):
        self.model = model
        self.estimate = prior
        self.iterated = iterated
        self.max_iter = max_iter
        self.step_tol = step_tol
        self.last_report = None

    def step(self, y, k=None, u=None):
        pred = ekf_predict(self.estimate, self.model, u)
        if k is not None:
            pred = Estimate(pred.mean, pred.cov, PREDICTED, k)
        if self.iterated:
            self.estimate, self.last_report, _ = iekf_update(pred, self.model, y, self.max_iter, self.step_tol)
        else:
            self.estimate, self.last_report = ekf_update(pred, self.model, y)
        return self.estimate
