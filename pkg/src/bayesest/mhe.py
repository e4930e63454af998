"""Moving-horizon estimation by projected Gauss-Newton.

Over the window ``k-N .. k`` the decision variables are the states
``x_{k-N} .. x_k``.  Process and measurement noise are eliminated through
the model (``w_l = x_{l+1} - f(x_l)``, ``v_l = y_l - h(x_l)``), leaving the
unconstrained least-squares cost

    |x_{k-N} - xbar|^2_{Pi^-1} + sum |w_l|^2_{Q^-1} + sum |v_l|^2_{R^-1}

Box bounds on the states are enforced by projecting each accepted step.
The arrival cost is refreshed with an EKF recursion on the measurement that
leaves the window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .core import as_vector
from .ekf import ekf_predict, ekf_update
from .errors import ContractError, EstimationError, NumericalSingularityError
from .kalman import PREDICTED, Estimate
from .trace import RunTrace

log = logging.getLogger(__name__)

MAX_ITER = 50
MAX_HALVINGS = 20
GRAD_TOL = 1e-8
STEP_TOL = 1e-10


@dataclass(frozen=True)
class ArrivalCost:
    """Quadratic prior ``(x - mean)' P^-1 (x - mean)`` on the first window state."""

    mean: np.ndarray
    P: np.ndarray

    @property
    def weight(self):
        return np.linalg.inv(self.P)


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def project(self, X):
        if self.lower is not None:
            X = np.maximum(X, self.lower)
        if self.upper is not None:
            X = np.minimum(X, self.upper)
        return X


@dataclass
class MheProblem:
    """One window: ``ys[j]`` is the measurement of the state at ``k0 + j``.

    ``inputs[j]`` drives the step from ``k0 + j`` to ``k0 + j + 1``.
    ``arrival=None`` drops the arrival term (prior-free least squares).
    """

    model: object
    arrival: ArrivalCost | None
    ys: np.ndarray
    k0: int = 0
    inputs: np.ndarray | None = None
    bounds: Bounds | None = None

    def __post_init__(self):
        self.ys = np.asarray(self.ys, dtype=float).reshape(-1, self.model.n_y)
        if self.inputs is not None and len(self.inputs) < self.horizon:
            raise ContractError(f"window of horizon {self.horizon} needs {self.horizon} inputs")

    @property
    def horizon(self):
        return len(self.ys) - 1

    def u(self, j):
        return None if self.inputs is None else self.inputs[j]


@dataclass
class MheResult:
    states: np.ndarray
    cost: float
    iterations: int
    converged: bool
    grad_norm: float
    terminal_cov: np.ndarray | None = None
    message: str = ""


def _inv_chol(S, name):
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalSingularityError(f"{name} must be positive definite") from None
    return sla.solve_triangular(L, np.eye(len(S)), lower=True)


class _Residuals:
    """Whitened residual vector and its Jacobian for one window."""

    def __init__(self, p):
        m = p.model
        self.p = p
        self.n = m.n_x
        self.Wq = _inv_chol(m.Q, "Q")
        self.Wr = _inv_chol(m.R, "R")
        self.Wa = None if p.arrival is None else _inv_chol(np.asarray(p.arrival.P, dtype=float), "arrival covariance")

    def __call__(self, X, jacobian=False):
        p, m, n = self.p, self.p.model, self.n
        N = p.horizon
        rows, blocks = [], []
        if self.Wa is not None:
            rows.append(self.Wa @ (X[0] - p.arrival.mean))
            blocks.append([(0, self.Wa)])
        for j in range(N):
            k, u = p.k0 + j, p.u(j)
            rows.append(self.Wq @ (X[j + 1] - m.transition(X[j], k, u)))
            if jacobian:
                blocks.append([(j, -self.Wq @ m.F(X[j], k, u)), (j + 1, self.Wq)])
        for j in range(N + 1):
            k = p.k0 + j
            rows.append(self.Wr @ (p.ys[j] - m.measure(X[j], k)))
            if jacobian:
                blocks.append([(j, -self.Wr @ m.H(X[j], k))])
        r = np.concatenate(rows)
        if not jacobian:
            return r
        J = np.zeros((len(r), (N + 1) * n))
        row = 0
        for entry in blocks:
            height = entry[0][1].shape[0]
            for col, B in entry:
                J[row : row + height, col * n : (col + 1) * n] = B
            row += height
        return r, J


def _projected_gradient(g, X, bounds):
    if bounds is None:
        return g
    g = g.copy()
    flat = X.ravel()
    n = X.shape[1]
    if bounds.lower is not None:
        lo = np.tile(np.broadcast_to(bounds.lower, (n,)), len(X))
        g[(flat <= lo) & (g > 0)] = 0.0
    if bounds.upper is not None:
        hi = np.tile(np.broadcast_to(bounds.upper, (n,)), len(X))
        g[(flat >= hi) & (g < 0)] = 0.0
    return g


def mhe_solve(p, init=None, max_iter=MAX_ITER, grad_tol=GRAD_TOL, step_tol=STEP_TOL):
    """Minimize the window cost from the initial state sequence ``init``.

    Returns an :class:`MheResult`.  Hitting ``max_iter`` does not raise: the
    result has ``converged=False`` and carries the best iterate.
    """
    m = p.model
    L = p.horizon + 1
    n = m.n_x
    if init is None:
        init = np.tile(p.arrival.mean if p.arrival is not None else np.zeros(n), (L, 1))
    X = np.asarray(init, dtype=float).reshape(L, n).copy()
    if p.bounds is not None:
        X = p.bounds.project(X)
    res = _Residuals(p)
    r, J = res(X, jacobian=True)
    cost = float(r @ r)
    converged = False
    message = ""
    it = 0
    gnorm = np.inf
    while True:
        g = _projected_gradient(J.T @ r, X, p.bounds)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol * (1.0 + cost):
            converged, message = True, "gradient"
            break
        if it >= max_iter:
            message = "iteration limit"
            break
        delta, _, rank, _ = np.linalg.lstsq(J, -r, rcond=None)
        if rank < J.shape[1]:
            raise NumericalSingularityError("Gauss-Newton normal equations are singular")
        step = delta.reshape(L, n)
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            X_try = X + t * step
            if p.bounds is not None:
                X_try = p.bounds.project(X_try)
            r_try = res(X_try)
            cost_try = float(r_try @ r_try)
            if np.isfinite(cost_try) and cost_try <= cost:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged, message = True, "no descent"
            break
        moved = float(np.linalg.norm(X_try - X))
        X = X_try
        cost = cost_try
        it += 1
        r, J = res(X, jacobian=True)
        if moved <= step_tol:
            converged, message = True, "step"
            break
    info = J.T @ J
    try:
        cov = np.linalg.inv(info)[-n:, -n:]
        cov = 0.5 * (cov + cov.T)
    except np.linalg.LinAlgError:
        cov = None
    return MheResult(X, cost, it, converged, gnorm, cov, message)


def arrival_update(a, m, y_out, k_out, u_out=None):
    """Arrival cost for the next window once ``y_out`` leaves the window.

    EKF-filters the current anchor with ``y_out`` (the measurement at time
    ``k_out``), then predicts one step.  On a linear model this is the KF
    recursion, so the arrival cost stays the exact prior.
    """
    prior = Estimate(a.mean, a.P, PREDICTED, k_out)
    filtered, _ = ekf_update(prior, m, y_out)
    pred = ekf_predict(filtered, m, u_out)
    return ArrivalCost(pred.mean, pred.cov)


@dataclass
class MovingHorizonEstimator:
    """Receding-horizon driver; feed measurements with :meth:`step`.

    ``prior`` is the estimate of ``x_0``; the first window starts at ``k=1``
    with the one-step EKF prediction of that prior as its arrival cost.
    Until ``N + 1`` measurements are available the window grows.
    """

    model: object
    prior: Estimate
    horizon: int = 10
    bounds: Bounds | None = None
    max_iter: int = MAX_ITER
    ys: list = field(default_factory=list)
    us: list = field(default_factory=list)
    arrival: ArrivalCost | None = None
    solution: np.ndarray | None = None
    k0: int = 1
    estimate: Estimate | None = None
    last_result: MheResult | None = None
    failures: list = field(default_factory=list)
    _pending_u0: object = None

    def __post_init__(self):
        if self.horizon < 0:
            raise ContractError("horizon must be non-negative")
        self.estimate = self.prior
        self.last_prediction = None

    name = "MHE"

    def step(self, y, k=None, u=None):
        m = self.model
        y = as_vector(y, "y")
        if self.arrival is None:
            pred = ekf_predict(self.prior, m, u)
            self.arrival = ArrivalCost(pred.mean, pred.cov)
            self.k0 = self.prior.k + 1
            self._pending_u0 = u
        else:
            self.us.append(u)
        self.ys.append(y)
        prev = None if self.solution is None else self.solution
        if len(self.ys) > self.horizon + 1:
            y_out = self.ys.pop(0)
            u_out = self.us.pop(0)
            self.arrival = arrival_update(self.arrival, m, y_out, self.k0, u_out)
            self.k0 += 1
            if prev is not None:
                prev = prev[1:]
        k_now = self.k0 + len(self.ys) - 1
        if prev is None:
            init = np.tile(self.arrival.mean, (len(self.ys), 1))
        else:
            last_u = self.us[-1] if self.us else None
            init = np.vstack([prev, m.transition(prev[-1], k_now - 1, last_u)])
        self.last_prediction = m.measure(init[-1], k_now)
        inputs = None
        if any(v is not None for v in self.us):
            inputs = np.array([np.atleast_1d(v) for v in self.us])
        problem = MheProblem(m, self.arrival, np.array(self.ys), self.k0, inputs, self.bounds)
        result = mhe_solve(problem, init, self.max_iter)
        if not result.converged:
            self.failures.append(k_now)
            log.warning("MHE window ending at k=%d stopped on %s", k_now, result.message)
        self.last_result = result
        self.solution = result.states
        self.estimate = Estimate(result.states[-1], result.terminal_cov, "updated", k_now)
        return self.estimate


def mhe_filter_run(m, ys, N, prior, constraints=None, inputs=None, truth=None, dt=1.0):
    """Run MHE over ``ys`` (``ys[j]`` is ``y_{j+1}``) and collect a :class:`RunTrace`.

    ``truth`` (states ``x_1..x_K``) is optional; without it the truth columns
    are NaN.  Windows that fail to converge are listed in ``trace.notes`` and
    the run continues from the best iterate.
    """
    ys = np.asarray(ys, dtype=float).reshape(-1, m.n_y)
    K = len(ys)
    if K < N + 1:
        raise ContractError(f"need at least N+1={N + 1} measurements, got {K}")
    est = MovingHorizonEstimator(m, prior, N, constraints)
    X = np.empty((K, m.n_x))
    P = np.empty((K, m.n_x))
    innov = np.empty((K, m.n_y))
    for j in range(K):
        u = None if inputs is None else inputs[j]
        try:
            e = est.step(ys[j], j + 1, u)
        except EstimationError as exc:
            X[j:] = np.nan
            P[j:] = np.nan
            innov[j:] = np.nan
            tr_truth = np.full((K, m.n_x), np.nan) if truth is None else np.asarray(truth, dtype=float)
            return RunTrace(tr_truth, X, P, innov, "MHE", None, dt, {"N": N}, j + 1, str(exc))
        X[j] = e.mean
        P[j] = np.diag(e.cov) if e.cov is not None else np.nan
        innov[j] = ys[j] - est.last_prediction
    tr_truth = np.full((K, m.n_x), np.nan) if truth is None else np.asarray(truth, dtype=float)
    tr = RunTrace(tr_truth, X, P, innov, "MHE", None, dt, {"N": N})
    tr.notes = [f"non-converged window at k={k}" for k in est.failures]
    return tr
