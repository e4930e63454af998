"""Ensemble Kalman filter with perturbed observations.

Sample statistics use the unbiased ``1/(N_s - 1)`` normalization.  The
innovation covariance is the sample covariance of the *perturbed* predicted
outputs ``h(x_i) + v_i`` rather than ``cov(h(x)) + R``; the two agree only
as ``N_s`` grows.  No localization or inflation is applied, so very small
ensembles are rank deficient and may underestimate uncertainty.

Randomness: member ``i`` always takes row ``i`` of each block draw from the
filter's stream, so results depend only on the seed and the ensemble size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import solve_spd, symmetrize
from .errors import ContractError, DivergenceError
from .kalman import PREDICTED, UPDATED, Estimate


@dataclass
class Ensemble:
    members: np.ndarray  # (N_s, n_x)
    kind: str = UPDATED
    k: int = 0

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=float)
        if self.members.ndim != 2 or len(self.members) < 2:
            raise ContractError("an ensemble needs at least two members")

    @property
    def size(self):
        return len(self.members)


def enkf_init(g, N_s, rng):
    """Draw ``N_s`` i.i.d. members from the Gaussian ``g``."""
    if N_s < 2:
        raise ContractError("ensemble size must be at least 2")
    return Ensemble(rng.gaussian(g.cov, size=N_s, mean=g.mean), UPDATED, 0)


def _check_members(X, k):
    finite = np.all(np.isfinite(X), axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise DivergenceError(f"ensemble member {bad} is not finite at step {k}", step=k, index=bad)


def enkf_predict(ens, m, rng, u=None):
    """Push every member through ``f`` and add its own process-noise draw."""
    X = m.transition_batch(ens.members, ens.k, u) + rng.gaussian(m.Q, size=ens.size)
    _check_members(X, ens.k + 1)
    return Ensemble(X, PREDICTED, ens.k + 1)


def ensemble_moments(ens):
    """Sample mean and unbiased sample covariance of the members."""
    X = ens.members
    mean = X.mean(axis=0)
    D = X - mean
    return mean, symmetrize(D.T @ D / (len(X) - 1))


def enkf_update(ens, m, y, rng):
    """Perturbed-observation analysis step.

    Every member is shifted by the common gain ``Pxy Py^-1`` applied to its
    own innovation ``y - (h(x_i) + v_i)``.
    """
    X = ens.members
    N = len(X)
    Yp = m.measure_batch(X, ens.k) + rng.gaussian(m.R, size=N)
    x_mean = X.mean(axis=0)
    y_mean = Yp.mean(axis=0)
    DX = X - x_mean
    DY = Yp - y_mean
    Py = symmetrize(DY.T @ DY / (N - 1))
    Pxy = DX.T @ DY / (N - 1)
    K = solve_spd(Py, Pxy.T, jitter=True).T
    y = np.asarray(y, dtype=float).reshape(m.n_y)
    X_new = X + (y - Yp) @ K.T
    _check_members(X_new, ens.k)
    return Ensemble(X_new, UPDATED, ens.k)


def enkf_estimate(ens, with_cov=True):
    """Point estimate from the ensemble; ``cov`` is ``None`` when skipped."""
    if with_cov:
        mean, cov = ensemble_moments(ens)
        return Estimate(mean, cov, ens.kind, ens.k)
    return Estimate(ens.members.mean(axis=0), None, ens.kind, ens.k)


class EnsembleKalmanFilter:
    name = "EnKF"

    def __init__(self, model, prior, ensemble_size, rng, with_cov=True):
        if ensemble_size <= model.n_x:
            warnings.warn(
                f"ensemble of {ensemble_size} members cannot span the {model.n_x}-dimensional state; "
                "sample covariances will be rank deficient",
                RuntimeWarning,
                stacklevel=2,
            )
        self.model = model
        self.rng = rng
        self.with_cov = with_cov
        self.ensemble = enkf_init(prior, ensemble_size, rng)
        self.ensemble.k = getattr(prior, "k", 0)
        self.estimate = enkf_estimate(self.ensemble, with_cov)

    def step(self, y, k=None, u=None):
        ens = enkf_predict(self.ensemble, self.model, self.rng, u)
        if k is not None:
            ens.k = k
        self.ensemble = enkf_update(ens, self.model, y, self.rng)
        self.estimate = enkf_estimate(self.ensemble, self.with_cov)
        return self.estimate
