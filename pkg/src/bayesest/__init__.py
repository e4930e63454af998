"""Bayesian state estimation for discrete-time stochastic state-space models.

Linear and nonlinear Kalman-type filters (KF, steady-state KF, EKF/IEKF,
UKF, CKF, GHKF), the ensemble Kalman filter, Gaussian-sum and particle
filters, moving-horizon estimation, and a Monte Carlo benchmark harness
built around a sensorless induction-motor scenario.
"""

from .core import (
    Gaussian,
    JointGaussian,
    RngStream,
    affine_transform,
    condition,
    sum_independent,
)
from .ekf import ExtendedKalmanFilter, ekf_predict, ekf_update, iekf_update
from .ensemble import (
    Ensemble,
    EnsembleKalmanFilter,
    enkf_init,
    enkf_predict,
    enkf_update,
)
from .errors import (
    CapacityError,
    ContractError,
    ConvergenceError,
    DegeneracyError,
    DivergenceError,
    EstimationError,
    LinearizationError,
    NumericalSingularityError,
    ParameterError,
    TransformError,
)
from .gsf import GaussianMixture, GaussianSumFilter, gsf_predict, gsf_prune, gsf_update
from .kalman import (
    Estimate,
    KalmanFilter,
    kf_predict,
    kf_update,
    solve_dare,
    steady_state_filter,
)
from .mhe import (
    ArrivalCost,
    Bounds,
    MheProblem,
    MovingHorizonEstimator,
    arrival_update,
    mhe_filter_run,
    mhe_solve,
)
from .model import (
    LinearModel,
    StateSpaceModel,
    Trajectory,
    augment_for_sspe,
    discretize,
    simulate,
)
from .motor import MotorParams, motor_model
from .particle import (
    ParticleFilter,
    ParticleSet,
    effective_sample_size,
    pf_step,
    resample,
)
from .sigma import (
    CubatureKalmanFilter,
    GaussHermiteKalmanFilter,
    UnscentedKalmanFilter,
    UtParams,
    gauss_hermite_rule,
    sigma_points,
    unscented_transform,
)
from .trace import RunTrace, read_trace_csv

__version__ = "0.1.0"

__all__ = [
    "ArrivalCost",
    "Bounds",
    "CapacityError",
    "ContractError",
    "ConvergenceError",
    "CubatureKalmanFilter",
    "DegeneracyError",
    "DivergenceError",
    "Ensemble",
    "EnsembleKalmanFilter",
    "Estimate",
    "EstimationError",
    "ExtendedKalmanFilter",
    "GaussHermiteKalmanFilter",
    "Gaussian",
    "GaussianMixture",
    "GaussianSumFilter",
    "JointGaussian",
    "KalmanFilter",
    "LinearModel",
    "LinearizationError",
    "MheProblem",
    "MotorParams",
    "MovingHorizonEstimator",
    "NumericalSingularityError",
    "ParameterError",
    "ParticleFilter",
    "ParticleSet",
    "RngStream",
    "RunTrace",
    "StateSpaceModel",
    "Trajectory",
    "TransformError",
    "UnscentedKalmanFilter",
    "UtParams",
    "__version__",
    "affine_transform",
    "arrival_update",
    "augment_for_sspe",
    "condition",
    "discretize",
    "effective_sample_size",
    "ekf_predict",
    "ekf_update",
    "enkf_init",
    "enkf_predict",
    "enkf_update",
    "gauss_hermite_rule",
    "gsf_predict",
    "gsf_prune",
    "gsf_update",
    "iekf_update",
    "kf_predict",
    "kf_update",
    "mhe_filter_run",
    "mhe_solve",
    "motor_model",
    "pf_step",
    "read_trace_csv",
    "resample",
    "sigma_points",
    "simulate",
    "solve_dare",
    "steady_state_filter",
    "sum_independent",
    "unscented_transform",
]
