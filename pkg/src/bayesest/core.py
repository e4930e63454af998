"""Gaussian algebra, PSD square roots and the seeded random stream.

Everything in here is value-in/value-out.  ``Gaussian`` and ``JointGaussian``
are frozen after construction and safe to share between threads; an
``RngStream`` belongs to a single execution strand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import ContractError, NumericalSingularityError

#: Condition-number ceiling above which a matrix is treated as singular.
MAX_CONDITION = 1e12

_JITTER_ESCALATIONS = 3
_JITTER_FACTOR = 100.0


def symmetrize(P):
    """Return ``(P + P.T) / 2`` as a float array."""
    P = np.asarray(P, dtype=float)
    return 0.5 * (P + P.T)


def as_vector(x, name="vector"):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise ContractError(f"{name} must be one-dimensional, got shape {x.shape}")
    return x


def as_matrix(A, rows=None, cols=None, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        # a bare sequence is read as a single row
        A = A.reshape(1, -1) if rows in (None, 1) else A.reshape(-1, 1)
    if A.ndim != 2:
        raise ContractError(f"{name} must be two-dimensional, got shape {A.shape}")
    if rows is not None and A.shape[0] != rows:
        raise ContractError(f"{name} has {A.shape[0]} rows, expected {rows}")
    if cols is not None and A.shape[1] != cols:
        raise ContractError(f"{name} has {A.shape[1]} columns, expected {cols}")
    return A


def _check_psd(P, name):
    if P.size == 0:
        return
    scale = max(np.abs(P).sum(axis=1).max(), 1e-300)
    lam_min = np.linalg.eigvalsh(P)[0]
    if lam_min < -1e-10 * scale:
        raise ContractError(f"{name} is not positive semidefinite (min eigenvalue {lam_min:.3e})")


@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal ``N(mean, cov)``.

    The covariance is symmetrized on construction and checked for positive
    semidefiniteness.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        cov = symmetrize(as_matrix(self.cov, len(mean), len(mean), "cov"))
        _check_psd(cov, "cov")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return len(self.mean)


@dataclass(frozen=True)
class JointGaussian:
    """Two jointly Gaussian blocks ``(z1, z2)`` with cross covariance ``cross``."""

    mean1: np.ndarray
    mean2: np.ndarray
    cov1: np.ndarray
    cov2: np.ndarray
    cross: np.ndarray

    def __post_init__(self):
        m1 = as_vector(self.mean1, "mean1")
        m2 = as_vector(self.mean2, "mean2")
        n1, n2 = len(m1), len(m2)
        P1 = symmetrize(as_matrix(self.cov1, n1, n1, "cov1"))
        P2 = symmetrize(as_matrix(self.cov2, n2, n2, "cov2"))
        P12 = np.asarray(self.cross, dtype=float).reshape(n1, n2) if np.size(self.cross) == n1 * n2 else None
        if P12 is None:
            raise ContractError(f"cross must be {n1}x{n2}, got shape {np.shape(self.cross)}")
        for name, value in (("mean1", m1), ("mean2", m2), ("cov1", P1), ("cov2", P2), ("cross", P12)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        _check_psd(self.full_cov(), "joint covariance")

    @classmethod
    def from_gaussian(cls, g, n1):
        """Split a Gaussian into its first ``n1`` and remaining components."""
        m, P = g.mean, g.cov
        return cls(m[:n1], m[n1:], P[:n1, :n1], P[n1:, n1:], P[:n1, n1:])

    def full_mean(self):
        return np.concatenate([self.mean1, self.mean2])

    def full_cov(self):
        return np.block([[self.cov1, self.cross], [self.cross.T, self.cov2]])

    def marginal1(self):
        return Gaussian(self.mean1, self.cov1)

    def marginal2(self):
        return Gaussian(self.mean2, self.cov2)


def affine_transform(g, A, b=None):
    """Distribution of ``A z + b`` for ``z ~ g``."""
    A = as_matrix(A, cols=g.dim, name="A")
    b = np.zeros(A.shape[0]) if b is None else as_vector(b, "b")
    if len(b) != A.shape[0]:
        raise ContractError(f"b has length {len(b)}, expected {A.shape[0]}")
    return Gaussian(A @ g.mean + b, symmetrize(A @ g.cov @ A.T))


def sum_independent(g1, g2, A, B):
    """Distribution of ``A z1 + B z2`` for independent ``z1 ~ g1``, ``z2 ~ g2``."""
    A = as_matrix(A, cols=g1.dim, name="A")
    B = as_matrix(B, cols=g2.dim, name="B")
    if A.shape[0] != B.shape[0]:
        raise ContractError(f"A maps to {A.shape[0]} outputs but B maps to {B.shape[0]}")
    mean = A @ g1.mean + B @ g2.mean
    return Gaussian(mean, symmetrize(A @ g1.cov @ A.T + B @ g2.cov @ B.T))


def solve_spd(S, B, jitter=False):
    """Solve ``S X = B`` for symmetric positive definite ``S``.

    With ``jitter`` the same diagonal-loading escalation as :func:`matrix_sqrt`
    is tried before giving up.  Without it, a Cholesky failure or a condition
    number above :data:`MAX_CONDITION` raises ``NumericalSingularityError``.
    """
    S = symmetrize(S)
    B = np.asarray(B, dtype=float)
    n = S.shape[0]
    if not np.all(np.isfinite(S)):
        raise NumericalSingularityError("matrix to invert has non-finite entries")
    loads = [0.0]
    if jitter:
        delta = 1e-12 * max(1.0, np.trace(S) / n)
        loads += [delta * _JITTER_FACTOR**i for i in range(_JITTER_ESCALATIONS + 1)]
    for load in loads:
        try:
            c, low = sla.cho_factor(S + load * np.eye(n), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        d = np.diag(c)
        # Cholesky pivots bound the 2-norm condition number from below
        if (d.max() / d.min()) ** 2 > MAX_CONDITION:
            continue
        return sla.cho_solve((c, low), B, check_finite=False)
    raise NumericalSingularityError(f"{n}x{n} matrix is singular or indefinite")


def condition(j, z2_obs):
    """Distribution of ``z1`` given ``z2 = z2_obs``."""
    z2 = as_vector(z2_obs, "z2_obs")
    if len(z2) != len(j.mean2):
        raise ContractError(f"observation has length {len(z2)}, expected {len(j.mean2)}")
    # G = P12 P2^-1 without forming the inverse
    G = solve_spd(j.cov2, j.cross.T).T
    mean = j.mean1 + G @ (z2 - j.mean2)
    cov = symmetrize(j.cov1 - G @ j.cross.T)
    # round-off can leave tiny negative eigenvalues on exact conditioning
    w, V = np.linalg.eigh(cov)
    if w.size and w[0] < 0:
        cov = symmetrize((V * np.clip(w, 0.0, None)) @ V.T)
    return Gaussian(mean, cov)


def matrix_sqrt(P):
    """Lower-triangular ``L`` with ``L @ L.T == P`` for symmetric PSD ``P``.

    Rows/columns that are identically zero stay zero in ``L`` so a degenerate
    direction produces no spread.  The remaining block is Cholesky-factored;
    on failure ``delta * I`` is added with ``delta = 1e-12 * max(1, tr(P)/n)``
    and escalated by x100 at most three times.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ContractError(f"matrix_sqrt needs a square matrix, got shape {P.shape}")
    n = P.shape[0]
    if not np.all(np.isfinite(P)):
        raise NumericalSingularityError("matrix has non-finite entries")
    scale = max(1.0, np.abs(P).max(initial=0.0))
    if np.abs(P - P.T).max(initial=0.0) > 1e-8 * scale:
        raise ContractError("matrix_sqrt input is not symmetric")
    P = symmetrize(P)
    live = np.flatnonzero(np.any(P != 0.0, axis=1))
    L = np.zeros_like(P)
    if live.size == 0:
        return L
    S = P[np.ix_(live, live)]
    m = S.shape[0]
    delta = 1e-12 * max(1.0, np.trace(S) / m)
    for attempt in range(_JITTER_ESCALATIONS + 2):
        load = 0.0 if attempt == 0 else delta * _JITTER_FACTOR ** (attempt - 1)
        try:
            Ls = np.linalg.cholesky(S + load * np.eye(m))
        except np.linalg.LinAlgError:
            continue
        L[np.ix_(live, live)] = Ls
        return L
    raise NumericalSingularityError(f"{n}x{n} matrix is indefinite even after jitter")


def gaussian_logpdf(g, z):
    """Log density of ``g`` at ``z``.

    ``z`` may be a single point of shape ``(n,)`` or a batch ``(N, n)``; a
    batch returns an array of ``N`` log densities.
    """
    z = np.asarray(z, dtype=float)
    n = g.dim
    if z.shape[-1:] != (n,) and not (n == 1 and z.ndim <= 1):
        raise ContractError(f"point has trailing dimension {z.shape[-1:]}, expected {n}")
    if n == 1 and z.ndim == 1 and z.shape != (1,):
        z = z[:, None]
    try:
        L = np.linalg.cholesky(g.cov)
    except np.linalg.LinAlgError:
        raise NumericalSingularityError("covariance is singular") from None
    d = np.diag(L)
    if (d.max() / d.min()) ** 2 > MAX_CONDITION:
        raise NumericalSingularityError("covariance is numerically singular")
    r = (z - g.mean).reshape(-1, n)
    u = sla.solve_triangular(L, r.T, lower=True, check_finite=False)
    quad = np.einsum("ij,ij->j", u, u)
    out = -0.5 * (n * math.log(2.0 * math.pi) + 2.0 * np.log(d).sum() + quad)
    return float(out[0]) if z.ndim == 1 else out


@dataclass
class RngStream:
    """Seeded stream of random variates.

    ``(seed, stream_id)`` fully determines the draw sequence: the pair is fed
    to numpy's ``SeedSequence`` (as entropy and spawn key) and drives a
    PCG64 generator.  ``child`` derives an independent sub-stream, so every
    replica, filter and sample set can own its stream regardless of the
    order in which work is scheduled.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        key = (int(self.stream_id),) + tuple(int(i) for i in self.path)
        seq = np.random.SeedSequence(int(self.seed), spawn_key=key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, child_id):
        """Independent stream keyed by this stream's identity plus ``child_id``."""
        return RngStream(self.seed, self.stream_id, self.path + (int(child_id),))

    def standard_normal(self, size):
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def gaussian(self, cov, size=None, mean=None):
        """Draws from ``N(mean, cov)``; ``size`` draws stack along axis 0.

        A zero covariance consumes no variates, so noise-free runs do not
        depend on the seed at all.
        """
        cov = np.asarray(cov, dtype=float)
        n = cov.shape[0]
        shape = (n,) if size is None else (size, n)
        if not np.any(cov):
            out = np.zeros(shape)
        else:
            L = matrix_sqrt(cov)
            out = self._gen.standard_normal(shape) @ L.T
        if mean is not None:
            out = out + np.asarray(mean, dtype=float)
        return out
