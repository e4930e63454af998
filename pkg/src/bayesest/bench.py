"""Benchmark harness: scenarios, filter registry, Monte Carlo comparison.

Seeding.  Replica ``r`` of a study with base seed ``s`` uses seed ``s + r``.
The trajectory is simulated from ``RngStream(s + r, TRUTH_STREAM)`` and every
filter gets a fresh ``RngStream(s + r, FILTER_STREAM)``, so all filters see
the same measurements and a filter's result does not depend on its label or
on which other filters run alongside it.

Parallelism.  Replicas may run on a thread pool (``BAYESEST_THREADS``); each
replica owns its streams and results are reduced in replica order, so the
output does not depend on the thread count.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream
from .ekf import ExtendedKalmanFilter
from .ensemble import EnsembleKalmanFilter
from .errors import ContractError, DivergenceError, EstimationError, ParameterError
from .gsf import GaussianSumFilter
from .kalman import UPDATED, Estimate, KalmanFilter, steady_state_filter
from .mhe import MovingHorizonEstimator
from .model import LinearModel, simulate
from .motor import MotorParams, motor_model, voltage_input
from .particle import ParticleFilter
from .sigma import (
    CubatureKalmanFilter,
    GaussHermiteKalmanFilter,
    UnscentedKalmanFilter,
    UtParams,
)
from .trace import RunTrace

log = logging.getLogger(__name__)

TRUTH_STREAM = 0
FILTER_STREAM = 1
THREADS_ENV = "BAYESEST_THREADS"
COMPARISON_SCHEMA = "bayesest-comparison v1"
TIMING_SCHEMA = "bayesest-timing v1"
BURN_IN_FRACTION = 0.1


@dataclass(frozen=True)
class Scenario:
    """Everything needed to simulate truth and initialize a filter.

    ``inputs`` is ``None``, an array with row ``k`` holding ``u_k``, or a
    callable ``k -> u_k``.  ``linear`` is set for linear-Gaussian scenarios
    and enables the KF and steady-state filters.
    """

    model: object
    x0: np.ndarray
    prior: Estimate
    K: int
    dt: float = 1.0
    inputs: object = None
    linear: LinearModel | None = None
    name: str = "scenario"

    def simulate(self, seed):
        return simulate(self.model, self.x0, self.K, RngStream(seed, TRUTH_STREAM), self.inputs)


def linear_scenario(F, H, Q, R, x0, prior_mean, prior_cov, K, dt=1.0, name="linear"):
    lin = LinearModel(F, H, Q, R)
    prior = Estimate(np.asarray(prior_mean, dtype=float), np.asarray(prior_cov, dtype=float), UPDATED, 0)
    return Scenario(lin.to_model(name), np.asarray(x0, dtype=float), prior, int(K), dt, None, lin, name)


@dataclass(frozen=True)
class MotorScenarioConfig:
    params: MotorParams = field(default_factory=MotorParams)
    dt: float = 1e-4
    duration: float = 1.0
    Q: object = None  # None means 1e-4 * I
    R: object = None  # None means 1e-2 * I
    x0: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    prior_mean: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    prior_cov: float = 1e-2
    amplitude_d: float = 380.0
    freq_d: float = 50.0
    amplitude_q: float = -380.0
    freq_q: float = 100.0


def motor_scenario(config=None):
    """Open-loop induction-motor scenario: truth starts at 0, estimates at 1."""
    c = MotorScenarioConfig() if config is None else config
    K = int(round(c.duration / c.dt))
    if K < 1:
        raise ParameterError("duration must cover at least one step")
    m = motor_model(c.params, c.dt, _as_cov(c.Q, 5), _as_cov(c.R, 2))
    t = np.arange(K) * c.dt
    U = voltage_input(t, c.amplitude_d, c.freq_d, c.amplitude_q, c.freq_q).T
    prior = Estimate(np.asarray(c.prior_mean, dtype=float), _as_cov(c.prior_cov, 5), UPDATED, 0)
    return Scenario(m, np.asarray(c.x0, dtype=float), prior, K, c.dt, U, None, "motor")


def _as_cov(spec, n):
    """Scalar (times identity), diagonal list or full matrix; ``None`` passes through."""
    if spec is None:
        return None
    a = np.asarray(spec, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1:
        return np.diag(a)
    return a


# ---------------------------------------------------------------- filters


@dataclass(frozen=True)
class ParamSpec:
    kind: type
    default: object
    check: Callable = lambda v: True
    rule: str = ""


FILTER_PARAMS = {
    "kf": {},
    "ssf": {},
    "ekf": {},
    "iekf": {"max_iter": ParamSpec(int, 10, lambda v: v >= 1, ">= 1")},
    "ukf": {
        "alpha": ParamSpec(float, 1e-3, lambda v: v > 0, "> 0"),
        "beta": ParamSpec(float, 2.0),
        "kappa": ParamSpec(float, 0.0),
    },
    "ckf": {},
    "ghkf": {"order": ParamSpec(int, 3, lambda v: v >= 1, ">= 1")},
    "enkf": {"ensemble_size": ParamSpec(int, 100, lambda v: v >= 2, ">= 2")},
    "pf": {
        "particles": ParamSpec(int, 1000, lambda v: v >= 1, ">= 1"),
        "ess_threshold": ParamSpec(float, None, lambda v: v >= 0, ">= 0"),
    },
    "gsf": {
        "kernels": ParamSpec(int, 1, lambda v: v >= 1, ">= 1"),
        "w_min": ParamSpec(float, 1e-6, lambda v: 0 <= v < 1, "in [0, 1)"),
        "m_max": ParamSpec(int, 64, lambda v: v >= 1, ">= 1"),
    },
    "mhe": {"horizon": ParamSpec(int, 10, lambda v: v >= 0, ">= 0")},
}

DISPLAY = {
    "kf": "KF",
    "ssf": "SSKF",
    "ekf": "EKF",
    "iekf": "IEKF",
    "ukf": "UKF",
    "ckf": "CKF",
    "ghkf": "GHKF",
    "enkf": "EnKF",
    "pf": "PF",
    "gsf": "GSF",
    "mhe": "MHE",
}
LINEAR_ONLY = ("kf", "ssf")


def _coerce(value, spec):
    if value is None:
        return None
    if spec.kind is int:
        if isinstance(value, bool) or not float(value).is_integer():
            raise ValueError("expected an integer")
        return int(value)
    if isinstance(value, bool):
        raise ValueError("expected a number")
    return float(value)


def filter_param_errors(kind, params, path="params"):
    """List ``(key path, message)`` for every invalid filter parameter."""
    if kind not in FILTER_PARAMS:
        return [("type", f"unknown filter type {kind!r}; known: {', '.join(FILTER_PARAMS)}")]
    errors = []
    specs = FILTER_PARAMS[kind]
    for key, value in params.items():
        if key not in specs:
            errors.append((f"{path}.{key}", f"unknown parameter for {kind}"))
            continue
        try:
            v = _coerce(value, specs[key])
        except (TypeError, ValueError) as exc:
            errors.append((f"{path}.{key}", str(exc)))
            continue
        if v is not None and not specs[key].check(v):
            errors.append((f"{path}.{key}", f"must be {specs[key].rule}"))
    return errors


@dataclass(frozen=True)
class FilterConfig:
    """A filter type plus its parameters; ``label`` names the table row."""

    kind: str
    params: dict = field(default_factory=dict)
    label: str | None = None

    def __post_init__(self):
        errors = filter_param_errors(self.kind, self.params)
        if errors:
            raise ParameterError("; ".join(f"{p}: {m}" for p, m in errors))

    def value(self, key):
        spec = FILTER_PARAMS[self.kind][key]
        return _coerce(self.params.get(key, spec.default), spec)

    @property
    def name(self):
        if self.label:
            return self.label
        base = DISPLAY[self.kind]
        if self.kind == "enkf":
            return f"{base}-{self.value('ensemble_size')}"
        if self.kind == "pf":
            return f"{base}-{self.value('particles')}"
        if self.kind == "ghkf":
            return f"{base}-{self.value('order')}"
        if self.kind == "mhe":
            return f"{base}-{self.value('horizon')}"
        if self.kind == "gsf":
            return f"{base}-{self.value('kernels')}"
        return base


class _SteadyStateRunner:
    name = "SSKF"

    def __init__(self, lin, prior):
        self.ssf = steady_state_filter(lin)
        self.estimate = prior

    def step(self, y, k=None, u=None):
        e = self.ssf.step(self.estimate, y)
        self.estimate = Estimate(e.mean, e.cov, e.kind, e.k if k is None else k)
        return self.estimate


def build_filter(scenario, fc, rng):
    """Instantiate the filter described by ``fc`` on ``scenario``."""
    m, prior = scenario.model, scenario.prior
    kind = fc.kind
    if kind in LINEAR_ONLY and scenario.linear is None:
        raise ParameterError(f"{kind} needs a linear scenario")
    if kind == "kf":
        return KalmanFilter(scenario.linear, prior)
    if kind == "ssf":
        return _SteadyStateRunner(scenario.linear, prior)
    if kind == "ekf":
        return ExtendedKalmanFilter(m, prior)
    if kind == "iekf":
        return ExtendedKalmanFilter(m, prior, iterated=True, max_iter=fc.value("max_iter"))
    if kind == "ukf":
        p = UtParams(fc.value("alpha"), fc.value("beta"), fc.value("kappa"))
        return UnscentedKalmanFilter(m, prior, p)
    if kind == "ckf":
        return CubatureKalmanFilter(m, prior)
    if kind == "ghkf":
        return GaussHermiteKalmanFilter(m, prior, fc.value("order"))
    if kind == "enkf":
        return EnsembleKalmanFilter(m, prior, fc.value("ensemble_size"), rng)
    if kind == "pf":
        return ParticleFilter(m, prior, fc.value("particles"), rng, fc.value("ess_threshold"))
    if kind == "gsf":
        return GaussianSumFilter(m, prior, fc.value("kernels"), fc.value("w_min"), fc.value("m_max"))
    if kind == "mhe":
        return MovingHorizonEstimator(m, prior, fc.value("horizon"))
    raise ParameterError(f"unknown filter type {kind!r}")


def _innovation(filt, prev, m, y, k, u):
    report = getattr(filt, "last_report", None)
    if report is not None:
        return report.innovation
    pred = getattr(filt, "last_prediction", None)
    if pred is not None:
        return y - pred
    # plug-in one-step prediction for sampling filters
    return y - m.measure(m.transition(prev.mean, k - 1, u), k)


def run_filter(scenario, fc, traj, seed):
    """Filter one trajectory; estimation failures become a divergence marker."""
    m = scenario.model
    K = traj.K
    X = np.full((K, m.n_x), np.nan)
    P = np.full((K, m.n_x), np.nan)
    V = np.full((K, m.n_y), np.nan)
    tr = RunTrace(traj.states[1:], X, P, V, fc.name, seed, scenario.dt, {"type": fc.kind, **fc.params})
    try:
        filt = build_filter(scenario, fc, RngStream(seed, FILTER_STREAM))
    except EstimationError as exc:
        tr.diverged_at, tr.failure = 0, str(exc)
        return tr
    for j in range(K):
        k = j + 1
        y, u = traj.outputs[j], traj.input(j)
        prev = filt.estimate
        try:
            e = filt.step(y, k, u)
            if not np.all(np.isfinite(e.mean)):
                raise DivergenceError(f"estimate is not finite at step {k}", step=k)
            V[j] = _innovation(filt, prev, m, y, k, u)
        except (EstimationError, np.linalg.LinAlgError) as exc:
            X[j:] = P[j:] = V[j:] = np.nan
            tr.diverged_at, tr.failure = k, str(exc)
            log.warning("%s diverged at k=%d (seed %s): %s", fc.name, k, seed, exc)
            return tr
        X[j] = e.mean
        if e.cov is not None:
            P[j] = np.diag(e.cov)
    return tr


# ---------------------------------------------------------------- metrics


def error_metric(tr):
    """Sum over steps of the Euclidean estimation error."""
    if tr.diverged:
        raise DivergenceError(f"{tr.filter_name} diverged at k={tr.diverged_at}; error undefined", step=tr.diverged_at)
    return float(np.sum(tr.errors()))


def error_profile(tr, fraction=0.1):
    """Summed error over the first and over the last ``fraction`` of steps."""
    e = tr.errors()
    w = max(1, int(round(fraction * len(e))))
    return float(e[:w].sum()), float(e[-w:].sum())


def sigma_coverage(tr, multiple=3.0, burn_in=None, componentwise=False):
    """Fraction of post-burn-in steps with errors inside ``+/- multiple * sigma``.

    By default a step counts only when every component is inside its bound;
    ``componentwise=True`` returns the per-component fractions instead.
    ``burn_in`` defaults to the first 10% of the steps.
    """
    if burn_in is None:
        burn_in = int(BURN_IN_FRACTION * tr.K)
    P = tr.cov_diag[burn_in:]
    if P.size == 0:
        raise ContractError("no steps left after burn-in")
    if not np.all(np.isfinite(P)):
        raise ContractError("coverage needs a covariance diagonal at every step")
    err = np.abs(tr.truth[burn_in:] - tr.estimate[burn_in:])
    inside = err <= multiple * np.sqrt(np.maximum(P, 0.0))
    if componentwise:
        return inside.mean(axis=0)
    return float(np.all(inside, axis=1).mean())


# ---------------------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class ComparisonRow:
    """Aggregate over replicas; diverged runs are counted but excluded from the mean."""

    label: str
    kind: str
    runs: int
    mean_error: float
    std_error: float
    diverged: int
    errors: tuple  # per replica, NaN where diverged
    wall_time: float = 0.0

    @property
    def failed(self):
        return self.diverged == self.runs


def _row(fc, errors, wall):
    errs = np.asarray(errors, dtype=float)
    ok = errs[np.isfinite(errs)]
    mean = float(ok.mean()) if len(ok) else float("nan")
    std = float(ok.std(ddof=1)) if len(ok) > 1 else (0.0 if len(ok) else float("nan"))
    return ComparisonRow(fc.name, fc.kind, len(errs), mean, std, int(len(errs) - len(ok)), tuple(errs.tolist()), wall)


@dataclass
class ComparisonTable:
    rows: list
    scenario: str = ""
    base_seed: int = 0

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_csv(self, path=None):
        buf = io.StringIO()
        n = self.rows[0].runs if self.rows else 0
        buf.write(f"# {COMPARISON_SCHEMA}\n# scenario={self.scenario} runs={n} base_seed={self.base_seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["filter", "type", "runs", "mean_error", "std_error", "diverged", "failed"])
        for r in self.rows:
            w.writerow([r.label, r.kind, r.runs, repr(r.mean_error), repr(r.std_error), r.diverged, int(r.failed)])
        return _emit(buf.getvalue(), path)

    def timing_csv(self, path=None):
        """Wall times, kept apart from the table so the table stays reproducible."""
        buf = io.StringIO()
        buf.write(f"# {TIMING_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["filter", "wall_time_s"])
        for r in self.rows:
            w.writerow([r.label, f"{r.wall_time:.6f}"])
        return _emit(buf.getvalue(), path)


def _emit(text, path):
    if path is None:
        return text
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def thread_count(threads=None):
    if threads is not None:
        return max(1, int(threads))
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ParameterError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _replica(scenario, configs, seed, keep_traces):
    traj = scenario.simulate(seed)
    out = []
    for fc in configs:
        t0 = time.perf_counter()
        tr = run_filter(scenario, fc, traj, seed)
        wall = time.perf_counter() - t0
        err = float("nan") if tr.diverged else error_metric(tr)
        out.append((err, wall, tr if keep_traces else None))
    return out


def compare(scenario, configs, n_runs, base_seed=0, threads=None, keep_traces=False):
    """Run every filter config on ``n_runs`` shared trajectories.

    Returns the :class:`ComparisonTable` and, with ``keep_traces``, the traces
    as ``traces[config_index][replica]``.
    """
    if n_runs < 1:
        raise ContractError("n_runs must be at least 1")
    configs = list(configs)
    seeds = [base_seed + r for r in range(n_runs)]
    nt = thread_count(threads)
    if nt == 1:
        results = [_replica(scenario, configs, s, keep_traces) for s in seeds]
    else:
        with ThreadPoolExecutor(nt) as pool:
            results = list(pool.map(lambda s: _replica(scenario, configs, s, keep_traces), seeds))
    rows = []
    traces = []
    for i, fc in enumerate(configs):
        errs = [results[r][i][0] for r in range(n_runs)]
        wall = sum(results[r][i][1] for r in range(n_runs))
        rows.append(_row(fc, errs, wall))
        traces.append([results[r][i][2] for r in range(n_runs)])
    table = ComparisonTable(rows, scenario.name, base_seed)
    return (table, traces) if keep_traces else table


def monte_carlo(scenario, fc, n_runs, base_seed=0, threads=None):
    """One comparison row for a single filter config."""
    return compare(scenario, [fc], n_runs, base_seed, threads).rows[0]
