import numpy as np
import pytest

from bayesest.core import RngStream
from bayesest.kalman import UPDATED, Estimate, KalmanFilter
from bayesest.model import LinearModel, simulate


def random_linear_model(seed, n_x=3, n_y=2, radius=0.9):
    """Stable random linear model with well-conditioned noise covariances."""
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(n_x, n_x))
    F *= radius / max(abs(np.linalg.eigvals(F)))
    H = rng.normal(size=(n_y, n_x))
    A = rng.normal(size=(n_x, n_x))
    B = rng.normal(size=(n_y, n_y))
    Q = 0.1 * A @ A.T + 0.05 * np.eye(n_x)
    R = 0.2 * B @ B.T + 0.1 * np.eye(n_y)
    return LinearModel(F, H, Q, R)


def run_kf(lin, prior, ys):
    kf = KalmanFilter(lin, prior)
    out = []
    for j, y in enumerate(ys):
        out.append(kf.step(y, j + 1))
    return out


@pytest.fixture
def linear_case():
    lin = random_linear_model(12)
    m = lin.to_model()
    traj = simulate(m, np.zeros(3), 200, RngStream(5))
    prior = Estimate(np.zeros(3), np.eye(3), UPDATED, 0)
    return lin, m, traj, prior
