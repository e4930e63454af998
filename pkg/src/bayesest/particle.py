"""Bootstrap particle filter with systematic resampling.

The proposal is the process model, so the weight update multiplies by the
measurement likelihood alone.  Likelihoods are handled in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Gaussian, gaussian_logpdf
from .errors import ContractError, DegeneracyError, DivergenceError
from .kalman import UPDATED, Estimate


@dataclass
class ParticleSet:
    particles: np.ndarray  # (N_s, n_x)
    weights: np.ndarray  # (N_s,)
    k: int = 0

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(len(self.particles))
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ContractError("particle weights must be finite and non-negative")

    @property
    def size(self):
        return len(self.particles)

    @classmethod
    def from_gaussian(cls, g, N_s, rng, k=0):
        X = rng.gaussian(g.cov, size=N_s, mean=g.mean)
        return cls(X, np.full(N_s, 1.0 / N_s), k)


def pf_propagate(ps, m, rng, u=None):
    X = m.transition_batch(ps.particles, ps.k, u) + rng.gaussian(m.Q, size=ps.size)
    finite = np.all(np.isfinite(X), axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise DivergenceError(f"particle {bad} is not finite at step {ps.k + 1}", step=ps.k + 1, index=bad)
    return ParticleSet(X, ps.weights.copy(), ps.k + 1)


def normalize_log_weights(log_w):
    """Exponentiate and normalize log weights, guarding against underflow."""
    top = np.max(log_w)
    if not np.isfinite(top):
        raise DegeneracyError("every weight is zero")
    w = np.exp(log_w - top)
    return w / w.sum()


def pf_weight_update(ps, m, y):
    """Multiply each weight by ``N(y; h(x_i), R)`` and renormalize."""
    y = np.asarray(y, dtype=float).reshape(m.n_y)
    resid = y - m.measure_batch(ps.particles, ps.k)
    loglik = np.atleast_1d(gaussian_logpdf(Gaussian(np.zeros(m.n_y), m.R), resid.reshape(-1, m.n_y)))
    with np.errstate(divide="ignore"):
        log_w = np.log(ps.weights) + loglik
    return ParticleSet(ps.particles, normalize_log_weights(log_w), ps.k)


def effective_sample_size(ps):
    """``1 / sum(W_i^2)``, clipped to ``[1, N_s]``."""
    return float(np.clip(1.0 / np.sum(ps.weights**2), 1.0, ps.size))


def systematic_indices(weights, u0):
    """Ancestor indices for the systematic grid ``(u0 + j) / N``, ``u0`` in [0, 1)."""
    N = len(weights)
    c = np.cumsum(weights)
    # absorb cumsum roundoff so grid points on an exact boundary go right
    c[:-1] -= 4 * N * np.finfo(float).eps
    c[-1] = 1.0
    positions = (u0 + np.arange(N)) / N
    return np.minimum(np.searchsorted(c, positions, side="right"), N - 1)


def resample(ps, rng):
    """Systematic resampling; output weights are uniform."""
    idx = systematic_indices(ps.weights, rng.uniform())
    N = ps.size
    return ParticleSet(ps.particles[idx], np.full(N, 1.0 / N), ps.k)


def pf_estimate(ps):
    """Weighted mean and weighted covariance ``sum W (x - mean)(x - mean)'``."""
    w = ps.weights
    mean = w @ ps.particles
    D = ps.particles - mean
    return Estimate(mean, (D.T * w) @ D, UPDATED, ps.k)


def pf_step(ps, m, y, rng, ess_threshold=None, u=None):
    """Propagate, reweight, estimate, then resample when ESS <= threshold.

    The estimate is taken before resampling.  ``ess_threshold`` defaults to
    ``N_s / 2``; 0 never resamples and ``N_s`` always does.
    """
    if ess_threshold is None:
        ess_threshold = ps.size / 2.0
    ps = pf_weight_update(pf_propagate(ps, m, rng, u), m, y)
    est = pf_estimate(ps)
    if effective_sample_size(ps) <= ess_threshold:
        ps = resample(ps, rng)
    return ps, est


class ParticleFilter:
    name = "PF"

    def __init__(self, model, prior, particles, rng, ess_threshold=None):
        self.model = model
        self.rng = rng
        self.ess_threshold = particles / 2.0 if ess_threshold is None else ess_threshold
        self.particles = ParticleSet.from_gaussian(prior, particles, rng, getattr(prior, "k", 0))
        self.estimate = pf_estimate(self.particles)

    def step(self, y, k=None, u=None):
        ps = self.particles
        if k is not None:
            ps = ParticleSet(ps.particles, ps.weights, k - 1)
        self.particles, self.estimate = pf_step(ps, self.model, y, self.rng, self.ess_threshold, u)
        return self.estimate
