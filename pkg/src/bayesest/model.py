"""Discrete-time stochastic state-space models.

    x_{k+1} = f(x_k, k, u_k) + w_k,   w_k ~ N(0, Q)
    y_k     = h(x_k, k) + v_k,        v_k ~ N(0, R)

Noise is additive only.  ``f`` and ``h`` must be pure.  When a model is
flagged ``vectorized`` its maps also accept a stack of states with shape
``(N, n_x)`` and return one row per state; sample-based filters use that to
avoid a Python loop per particle.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .core import _check_psd, as_matrix, as_vector, symmetrize
from .errors import ContractError, DivergenceError, LinearizationError, ParameterError

#: Relative step for central-difference Jacobians: ``h_i = FD_STEP * (1 + |x_i|)``.
FD_STEP = 1e-6


@dataclass(frozen=True)
class StateSpaceModel:
    """Nonlinear model with additive Gaussian noise.

    Parameters
    ----------
    n_x, n_y : int
        State and output dimensions.
    f : callable
        ``f(x, k, u) -> x_next``.
    h : callable
        ``h(x, k) -> y``.
    Q, R : ndarray
        Process and measurement noise covariances.  ``R`` must be positive
        definite.
    jac_f, jac_h : callable, optional
        ``jac_f(x, k, u)`` and ``jac_h(x, k)``.  Central finite differences are
        used when absent.
    vectorized : bool
        ``f``/``h`` broadcast over a leading sample axis.
    """

    n_x: int
    n_y: int
    f: Callable
    h: Callable
    Q: np.ndarray
    R: np.ndarray
    jac_f: Callable | None = None
    jac_h: Callable | None = None
    vectorized: bool = False
    name: str = "model"

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ContractError("model dimensions must be positive")
        Q = symmetrize(as_matrix(self.Q, self.n_x, self.n_x, "Q"))
        R = symmetrize(as_matrix(self.R, self.n_y, self.n_y, "R"))
        _check_psd(Q, "Q")
        _check_psd(R, "R")
        Q.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    def transition(self, x, k=0, u=None):
        return np.asarray(self.f(np.asarray(x, dtype=float), k, u), dtype=float).reshape(self.n_x)

    def measure(self, x, k=0):
        return np.asarray(self.h(np.asarray(x, dtype=float), k), dtype=float).reshape(self.n_y)

    def transition_batch(self, X, k=0, u=None):
        """Apply ``f`` to each row of ``X``."""
        X = np.asarray(X, dtype=float)
        if self.vectorized:
            return np.asarray(self.f(X, k, u), dtype=float).reshape(len(X), self.n_x)
        return np.array([self.transition(x, k, u) for x in X]).reshape(len(X), self.n_x)

    def measure_batch(self, X, k=0):
        X = np.asarray(X, dtype=float)
        if self.vectorized:
            return np.asarray(self.h(X, k), dtype=float).reshape(len(X), self.n_y)
        return np.array([self.measure(x, k) for x in X]).reshape(len(X), self.n_y)

    def F(self, x, k=0, u=None):
        """Jacobian of ``f`` at ``x``: analytic if provided, else central differences."""
        x = as_vector(x)
        if self.jac_f is not None:
            J = as_matrix(self.jac_f(x, k, u), self.n_x, self.n_x, "jac_f")
        else:
            J = _central_difference(lambda X: self.transition_batch(X, k, u), x, self.n_x)
        if not np.all(np.isfinite(J)):
            raise LinearizationError(f"state Jacobian is not finite at step {k}")
        return J

    def H(self, x, k=0):
        """Jacobian of ``h`` at ``x``."""
        x = as_vector(x)
        if self.jac_h is not None:
            J = as_matrix(self.jac_h(x, k), self.n_y, self.n_x, "jac_h")
        else:
            J = _central_difference(lambda X: self.measure_batch(X, k), x, self.n_y)
        if not np.all(np.isfinite(J)):
            raise LinearizationError(f"measurement Jacobian is not finite at step {k}")
        return J


def _central_difference(fn_batch, x, n_out):
    n = len(x)
    steps = FD_STEP * (1.0 + np.abs(x))
    E = np.diag(steps)
    X = np.vstack([x + E, x - E])
    Y = fn_batch(X)
    return ((Y[:n] - Y[n:]) / (2.0 * steps)[:, None]).T.reshape(n_out, n)


def numerical_jacobian(fn, x):
    """Central-difference Jacobian of a single-point map ``fn(x)``."""
    x = as_vector(x)
    y0 = np.atleast_1d(fn(x))
    return _central_difference(lambda X: np.array([np.atleast_1d(fn(r)) for r in X]), x, len(y0))


@dataclass(frozen=True)
class LinearModel:
    """Time-invariant ``x+ = F x + w``, ``y = H x + v``."""

    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        n = F.shape[0]
        H = as_matrix(self.H, cols=n, name="H")
        Q = symmetrize(as_matrix(self.Q, n, n, "Q"))
        R = symmetrize(as_matrix(self.R, H.shape[0], H.shape[0], "R"))
        if F.shape != (n, n):
            raise ContractError(f"F must be square, got shape {F.shape}")
        for name, value in (("F", F), ("H", H), ("Q", Q), ("R", R)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_x(self):
        return self.F.shape[0]

    @property
    def n_y(self):
        return self.H.shape[0]

    def to_model(self, name="linear"):
        """Equivalent :class:`StateSpaceModel` with constant Jacobians."""
        F, H = self.F, self.H
        return StateSpaceModel(
            n_x=self.n_x,
            n_y=self.n_y,
            f=lambda x, k=0, u=None: x @ F.T,
            h=lambda x, k=0: x @ H.T,
            Q=self.Q,
            R=self.R,
            jac_f=lambda x, k=0, u=None: F,
            jac_h=lambda x, k=0: H,
            vectorized=True,
            name=name,
        )


@dataclass
class Trajectory:
    """Simulated states ``x_0..x_K``, outputs ``y_1..y_K`` and inputs ``u_0..u_{K-1}``.

    ``outputs[k-1]`` holds ``y_k``; ``inputs[k]`` is applied on the step from
    ``x_k`` to ``x_{k+1}`` (``None`` for input-free models).
    """

    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray | None = None
    seed: int | None = None
    stream_id: int | None = None

    def __post_init__(self):
        K = len(self.states) - 1
        if len(self.outputs) != K:
            raise ContractError(f"{K + 1} states need {K} outputs, got {len(self.outputs)}")
        if self.inputs is not None and len(self.inputs) != K:
            raise ContractError(f"{K + 1} states need {K} inputs, got {len(self.inputs)}")

    @property
    def K(self):
        return len(self.outputs)

    def input(self, k):
        return None if self.inputs is None else self.inputs[k]


def input_sequence(inputs, K):
    """Materialize ``inputs`` (None, callable ``k -> u`` or array) for ``k < K``."""
    if inputs is None:
        return None
    if callable(inputs):
        return np.array([np.atleast_1d(inputs(k)) for k in range(K)], dtype=float)
    arr = np.asarray(inputs, dtype=float)
    if len(arr) < K:
        raise ContractError(f"need {K} inputs, got {len(arr)}")
    return arr[:K].reshape(K, -1)


def simulate(m, x0, K, rng, inputs=None):
    """Sample a trajectory of ``K`` steps from ``m`` starting at ``x0``.

    Process and measurement noise come from two child streams of ``rng`` so
    the state path does not depend on how many measurement draws were made.
    """
    if K < 1:
        raise ContractError("simulate needs K >= 1")
    x = as_vector(x0, "x0")
    if len(x) != m.n_x:
        raise ContractError(f"x0 has length {len(x)}, expected {m.n_x}")
    U = input_sequence(inputs, K)
    W = rng.child(0).gaussian(m.Q, size=K)
    V = rng.child(1).gaussian(m.R, size=K)
    states = np.empty((K + 1, m.n_x))
    outputs = np.empty((K, m.n_y))
    states[0] = x
    for k in range(K):
        u = None if U is None else U[k]
        x = m.transition(x, k, u) + W[k]
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"state became non-finite at step {k + 1}", step=k + 1)
        states[k + 1] = x
        outputs[k] = m.measure(x, k + 1) + V[k]
    return Trajectory(states, outputs, U, seed=rng.seed, stream_id=rng.stream_id)


def discretize(ode, dt, method="rk4"):
    """One-step map ``f(x, k, u)`` integrating ``xdot = ode(x, u)`` over ``dt``.

    The input is held constant across the step.  ``ode`` may broadcast over a
    leading axis; the returned map then does too.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if method == "euler":

        def step(x, k=0, u=None):
            return x + dt * ode(x, u)

    elif method == "rk4":

        def step(x, k=0, u=None):
            k1 = ode(x, u)
            k2 = ode(x + 0.5 * dt * k1, u)
            k3 = ode(x + 0.5 * dt * k2, u)
            k4 = ode(x + dt * k3, u)
            return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    else:
        raise ParameterError(f"unknown discretization method {method!r}")
    return step


def discretize_jacobian(ode, ode_jac, dt, method="rk4"):
    """Exact Jacobian of the :func:`discretize` step map, by forward chain rule.

    ``ode_jac(x, u)`` is the Jacobian of the vector field.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if method == "euler":

        def jac(x, k=0, u=None):
            x = np.asarray(x, dtype=float)
            return np.eye(len(x)) + dt * ode_jac(x, u)

    elif method == "rk4":

        def jac(x, k=0, u=None):
            x = np.asarray(x, dtype=float)
            eye = np.eye(len(x))
            k1 = ode(x, u)
            D1 = ode_jac(x, u)
            x2 = x + 0.5 * dt * k1
            k2 = ode(x2, u)
            D2 = ode_jac(x2, u) @ (eye + 0.5 * dt * D1)
            x3 = x + 0.5 * dt * k2
            k3 = ode(x3, u)
            D3 = ode_jac(x3, u) @ (eye + 0.5 * dt * D2)
            D4 = ode_jac(x + dt * k3, u) @ (eye + dt * D3)
            return eye + (dt / 6.0) * (D1 + 2.0 * D2 + 2.0 * D3 + D4)

    else:
        raise ParameterError(f"unknown discretization method {method!r}")
    return jac


def augment_for_sspe(m, param_dim, f_parametrized, q_param):
    """Append ``param_dim`` random-walk parameters to the state of ``m``.

    The augmented state is ``z = [x, theta]`` with

        x_{k+1}     = f_parametrized(x_k, theta_k, k, u_k) + w_k
        theta_{k+1} = theta_k + w^theta_k,   w^theta_k ~ N(0, q_param)

    and the measurement map reads only the ``x`` block.  Jacobians of the
    augmented model fall back to finite differences.
    """
    if param_dim == 0:
        return m
    if param_dim < 0:
        raise ContractError("param_dim must be non-negative")
    n = m.n_x
    q_param = symmetrize(as_matrix(q_param, param_dim, param_dim, "q_param"))
    _check_psd(q_param, "q_param")

    def f(z, k=0, u=None):
        z = np.asarray(z, dtype=float)
        x, theta = z[..., :n], z[..., n:]
        return np.concatenate([np.asarray(f_parametrized(x, theta, k, u), dtype=float), theta], axis=-1)

    def h(z, k=0):
        return m.h(np.asarray(z, dtype=float)[..., :n], k)

    return StateSpaceModel(
        n_x=n + param_dim,
        n_y=m.n_y,
        f=f,
        h=h,
        Q=sla.block_diag(m.Q, q_param),
        R=m.R,
        vectorized=m.vectorized,
        name=f"{m.name}+sspe",
    )


def constant_input(u):
    """Input schedule returning ``u`` at every step."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return lambda k: u


def linear_jacobian_provider(A):
    """``jac(x, ...) -> A`` for maps with a constant Jacobian."""
    A = np.asarray(A, dtype=float)
    return lambda x, *args, **kwargs: A
