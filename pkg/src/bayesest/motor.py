"""Induction motor in a stationary two-phase (d-q) frame.

State ``x = [i_ds, i_qs, psi_dr, psi_qr, omega]``, input ``u = [u_ds, u_qs]``,
output ``y = [i_ds, i_qs]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError
from .model import StateSpaceModel, discretize, discretize_jacobian

SELECTOR = np.array([[1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0, 0.0]])
SELECTOR.setflags(write=False)


@dataclass(frozen=True)
class MotorParams:
    """Electrical and mechanical motor constants (SI units).

    The defaults describe a generic laboratory-scale machine.  They are
    placeholders, not measured values for any particular motor; override
    them from a config file for real studies.

    The leakage term ``sigma`` keeps the cubic ``L_m**3`` exactly as the
    model is usually quoted for this benchmark, so ``sigma`` here differs
    from the textbook ``L_s * (1 - L_m**2 / (L_s * L_r))``.
    """

    R_s: float = 0.18
    R_r: float = 0.15
    L_s: float = 0.0699
    L_r: float = 0.0699
    L_m: float = 0.068
    J: float = 0.0586
    T_L: float = 10.0

    def __post_init__(self):
        for name in ("R_s", "R_r", "L_s", "L_r", "L_m", "J"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"motor parameter {name} must be positive")
        if not self.sigma > 0:
            raise ParameterError(f"leakage coefficient sigma={self.sigma:.4g} must be positive")

    @property
    def sigma(self):
        return self.L_s * (1.0 - self.L_m**3 / (self.L_s * self.L_r))

    @property
    def alpha(self):
        return self.R_r / self.L_r

    @property
    def beta(self):
        return self.L_m / (self.sigma * self.L_r)

    @property
    def gamma(self):
        return self.R_s / self.sigma + self.alpha * self.beta * self.L_m

    @property
    def mu(self):
        return 3.0 * self.L_m / (2.0 * self.L_r)

    def to_dict(self):
        return asdict(self)


def motor_field(x, u, p):
    """Time derivative of the motor state; broadcasts over leading axes of ``x``."""
    x = np.asarray(x, dtype=float)
    u = np.zeros(2) if u is None else np.asarray(u, dtype=float)
    ids, iqs, pdr, pqr, w = (x[..., i] for i in range(5))
    a, b, g = p.alpha, p.beta, p.gamma
    d_ids = -g * ids + a * b * pdr + b * pqr * w + u[..., 0] / p.sigma
    d_iqs = -g * iqs - b * pdr * w + a * b * pqr + u[..., 1] / p.sigma
    d_pdr = a * p.L_m * ids - a * pdr - pqr * w
    d_pqr = a * p.L_m * iqs + pdr * w - a * pqr
    d_w = (p.mu / p.J) * (-ids * pqr + pdr * iqs) - p.T_L / p.J
    return np.stack([d_ids, d_iqs, d_pdr, d_pqr, d_w], axis=-1)


def motor_field_jacobian(x, u, p):
    """Jacobian of :func:`motor_field` with respect to the state (single point)."""
    ids, iqs, pdr, pqr, w = np.asarray(x, dtype=float)
    a, b, g = p.alpha, p.beta, p.gamma
    c = p.mu / p.J
    return np.array(
        [
            [-g, 0.0, a * b, b * w, b * pqr],
            [0.0, -g, -b * w, a * b, -b * pdr],
            [a * p.L_m, 0.0, -a, -w, -pqr],
            [0.0, a * p.L_m, w, -a, pdr],
            [-c * pqr, c * pdr, c * iqs, -c * ids, 0.0],
        ]
    )


def motor_measurement(x):
    """Stator currents ``[i_ds, i_qs]``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 5:
        raise ParameterError(f"motor state has 5 components, got {x.shape[-1]}")
    return x[..., :2]


def voltage_input(t, amplitude_d=380.0, freq_d=50.0, amplitude_q=-380.0, freq_q=100.0):
    """Open-loop stator voltages ``[u_ds(t), u_qs(t)]``."""
    return np.array(
        [amplitude_d * np.sin(2.0 * np.pi * freq_d * t), amplitude_q * np.sin(2.0 * np.pi * freq_q * t)]
    )


def motor_model(params=None, dt=1e-4, Q=None, R=None, method="rk4"):
    """Discrete-time motor model with an exact Jacobian of the integrator step."""
    p = MotorParams() if params is None else params
    field = lambda x, u: motor_field(x, u, p)
    field_jac = lambda x, u: motor_field_jacobian(x, u, p)
    return StateSpaceModel(
        n_x=5,
        n_y=2,
        f=discretize(field, dt, method),
        h=lambda x, k=0: motor_measurement(x),
        Q=1e-4 * np.eye(5) if Q is None else Q,
        R=1e-2 * np.eye(2) if R is None else R,
        jac_f=discretize_jacobian(field, field_jac, dt, method),
        jac_h=lambda x, k=0: SELECTOR,
        vectorized=True,
        name="induction_motor",
    )
