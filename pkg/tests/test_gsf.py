import numpy as np
import pytest
from scipy import stats

from bayesest.core import Gaussian, RngStream
from bayesest.ekf import ExtendedKalmanFilter, ekf_predict, ekf_update
from bayesest.errors import DegeneracyError, LinearizationError
from bayesest.gsf import (
    GaussianMixture,
    GaussianSumFilter,
    gsf_estimate,
    gsf_predict,
    gsf_prune,
    gsf_update,
    split_gaussian,
)
from bayesest.kalman import PREDICTED, Estimate, kf_predict, kf_update
from bayesest.model import LinearModel, StateSpaceModel, simulate


def scalar_model(f, h, Q=0.0, R=1.0, **kw):
    return StateSpaceModel(1, 1, f, h, [[Q]], [[R]], **kw)


def mix1d(weights, means, variances, kind=PREDICTED):
    return GaussianMixture(weights, np.array(means, dtype=float)[:, None], np.array(variances, dtype=float)[:, None, None], kind)


# ---------------------------------------------------------------- predict / update


def test_predict_single_kernel_is_ekf():
    m = scalar_model(lambda x, k, u: np.sin(x) + x, lambda x, k: x, Q=0.2)
    e = Estimate([0.4], [[0.3]])
    out = gsf_predict(GaussianMixture([1.0], [[0.4]], [[[0.3]]]), m)
    ref = ekf_predict(e, m)
    assert np.array_equal(out.means[0], ref.mean) and np.array_equal(out.covs[0], ref.cov)
    assert out.weights[0] == 1.0 and out.k == 1


def test_predict_identical_kernels():
    m = scalar_model(lambda x, k, u: x**2, lambda x, k: x, Q=0.1)
    out = gsf_predict(mix1d([0.3, 0.7], [1.0, 1.0], [0.5, 0.5]), m)
    assert np.array_equal(out.means[0], out.means[1]) and np.array_equal(out.covs[0], out.covs[1])
    assert np.array_equal(out.weights, [0.3, 0.7])


def test_predict_linear_kernels_are_kf():
    lin = LinearModel([[0.9, 0.2], [0.0, 0.7]], [[1.0, 0.0]], 0.1 * np.eye(2), [[0.5]])
    mix = GaussianMixture([0.4, 0.6], [[1.0, 0.0], [-1.0, 2.0]], [np.eye(2), 2 * np.eye(2)])
    out = gsf_predict(mix, lin.to_model())
    for i in range(2):
        ref = kf_predict(mix.kernel(i), lin)
        assert np.allclose(out.means[i], ref.mean, atol=1e-12) and np.allclose(out.covs[i], ref.cov, atol=1e-12)


def test_predict_reports_kernel_index():
    m = scalar_model(lambda x, k, u: x, lambda x, k: x, jac_f=lambda x, k, u: np.array([[np.inf if x[0] > 0 else 1.0]]))
    with pytest.raises(LinearizationError, match="kernel 1"):
        gsf_predict(mix1d([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0], kind="updated"), m)


def test_update_single_kernel_is_ekf():
    m = scalar_model(lambda x, k, u: x, lambda x, k: x**3)
    out = gsf_update(mix1d([1.0], [1.0], [1.0]), m, [1.0])
    ref, _ = ekf_update(Estimate([1.0], [[1.0]], PREDICTED), m, [1.0])
    assert out.weights[0] == 1.0
    assert np.array_equal(out.means[0], ref.mean) and np.array_equal(out.covs[0], ref.cov)


def test_update_two_kernel_weights():
    m = scalar_model(lambda x, k, u: x, lambda x, k: x)
    out = gsf_update(mix1d([0.5, 0.5], [0.0, 4.0], [1.0, 1.0]), m, [0.0])
    # each kernel's innovation variance is P + R = 2, so the ratio is exp(16 / 4)
    ratio = np.exp(4.0)
    assert np.allclose(out.weights, [ratio / (1 + ratio), 1 / (1 + ratio)], atol=1e-15)
    assert np.allclose(out.weights, [0.98201, 0.01799], atol=1e-5)
    assert abs(out.weights.sum() - 1.0) <= 1e-12


def test_update_kernel_with_no_likelihood():
    m = scalar_model(lambda x, k, u: x, lambda x, k: x, R=0.01)
    out = gsf_update(mix1d([0.5, 0.5], [0.0, 100.0], [0.01, 0.01]), m, [0.0])
    assert out.weights[1] == 0.0 and out.weights[0] == 1.0


def test_update_total_degeneracy():
    m = scalar_model(lambda x, k, u: x, lambda x, k: x, R=1e-6)
    with pytest.raises(DegeneracyError):
        gsf_update(mix1d([0.5, 0.5], [1e160, -1e160], [1e-6, 1e-6]), m, [0.0])


# ---------------------------------------------------------------- estimate / prune / split


def test_estimate_hand_cases():
    e = gsf_estimate(mix1d([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0]))
    assert e.mean[0] == 0.0 and e.cov[0, 0] == pytest.approx(2.0, abs=1e-15)
    e = gsf_estimate(mix1d([1.0, 0.0], [3.0, -7.0], [0.5, 9.0]))
    assert e.mean[0] == 3.0 and e.cov[0, 0] == 0.5
    e = gsf_estimate(mix1d([1.0], [2.0], [0.25]))
    assert e.mean[0] == 2.0 and e.cov[0, 0] == 0.25


def test_prune_examples():
    mix = mix1d([0.2, 0.3, 0.5], [0.0, 1.0, 2.0], [1.0, 1.0, 1.0])
    out = gsf_prune(mix, w_min=0.1, m_max=5)
    assert np.array_equal(out.weights, mix.weights) and np.array_equal(out.means, mix.means)
    out = gsf_prune(mix1d([0.999, 0.001], [0.0, 5.0], [1.0, 2.0]), w_min=0.01)
    assert out.size == 1 and out.weights[0] == 1.0 and out.means[0, 0] == 0.0
    out = gsf_prune(mix, m_max=1)
    assert out.size == 1 and out.weights[0] == 1.0 and out.means[0, 0] == 2.0
    out = gsf_prune(mix, m_max=2)
    assert np.allclose(out.weights, [0.375, 0.625]) and np.allclose(out.means[:, 0], [1.0, 2.0])


@pytest.mark.parametrize("m", [1, 2, 3, 5])
def test_split_preserves_moments(m):
    g = Gaussian([1.0, -0.5], [[2.0, 0.6], [0.6, 1.0]])
    mix = split_gaussian(g, m)
    assert mix.size == m and abs(mix.weights.sum() - 1.0) <= 1e-12
    e = gsf_estimate(mix)
    assert np.allclose(e.mean, g.mean, atol=1e-12) and np.allclose(e.cov, g.cov, atol=1e-12)
    for P in mix.covs:
        assert np.linalg.eigvalsh(P).min() >= -1e-12


# ---------------------------------------------------------------- filter


def test_single_kernel_trace_equals_ekf():
    m = scalar_model(lambda x, k, u: x + 0.1 * np.sin(x), lambda x, k: x**3, Q=0.05, R=0.5)
    traj = simulate(m, [0.3], 60, RngStream(1))
    prior = Estimate([0.0], [[0.5]])
    gsf, ekf = GaussianSumFilter(m, prior, 1), ExtendedKalmanFilter(m, prior)
    for j, y in enumerate(traj.outputs):
        a, b = gsf.step(y, j + 1), ekf.step(y, j + 1)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)


def test_bimodal_prior_linear_model_matches_bayes():
    lin = LinearModel([[0.95, 0.1], [0.0, 0.9]], [[1.0, 0.5]], 0.05 * np.eye(2), [[0.4]])
    m = lin.to_model()
    traj = simulate(m, [1.0, 1.0], 15, RngStream(2))
    w = np.array([0.4, 0.6])
    kernels = [Estimate([2.0, 1.0], [[0.5, 0.1], [0.1, 0.3]]), Estimate([-2.0, 0.0], [[0.3, 0.0], [0.0, 0.6]])]
    f = GaussianSumFilter(m, GaussianMixture.from_kernels(w, kernels), w_min=0.0)
    for j, y in enumerate(traj.outputs):
        est = f.step(y, j + 1)
        # closed-form posterior: a KF per kernel, weights by the kernel evidence
        evidence = []
        for i, e in enumerate(kernels):
            p = kf_predict(e, lin)
            kernels[i], r = kf_update(p, lin, y)
            evidence.append(stats.multivariate_normal(r.y_pred, r.Py).logpdf(y))
        lw = np.log(w) + np.array(evidence)
        w = np.exp(lw - lw.max())
        w /= w.sum()
        mean = sum(wi * e.mean for wi, e in zip(w, kernels))
        cov = sum(wi * (e.cov + np.outer(e.mean - mean, e.mean - mean)) for wi, e in zip(w, kernels))
        assert np.allclose(est.mean, mean, atol=1e-8) and np.allclose(est.cov, cov, atol=1e-8)
        assert abs(f.mixture.weights.sum() - 1.0) <= 1e-12


def _quantile_fit(grid, p, m):
    """Equal-mass bins of a gridded density, one moment-matched kernel per bin."""
    edges = np.searchsorted(np.cumsum(p), np.arange(1, m) / m)
    w, mu, var = [], [], []
    for idx in np.split(np.arange(len(grid)), edges):
        pw = p[idx]
        W = pw.sum()
        mean = pw @ grid[idx] / W
        w.append(W)
        mu.append(mean)
        var.append(pw @ (grid[idx] - mean) ** 2 / W)
    return mix1d(np.array(w) / sum(w), mu, var, kind="updated")


@pytest.mark.slow
def test_more_kernels_approach_bayes_posterior():
    Q, R, K, seeds = 0.01, 0.5, 3, 30
    f = lambda x: x + 0.2 * np.sin(x)
    h = lambda x: x + 0.5 * x**2
    m = scalar_model(
        lambda x, k, u: f(x),
        lambda x, k: h(x),
        Q=Q,
        R=R,
        jac_f=lambda x, k, u: np.array([[1 + 0.2 * np.cos(x[0])]]),
        jac_h=lambda x, k: np.array([[1 + x[0]]]),
    )
    prior = stats.gamma(1.0, loc=-1.0)  # skewed, mean 0, variance 1
    grid = np.linspace(-8.0, 14.0, 4001)
    p0 = prior.pdf(grid)
    p0 /= p0.sum()
    T = np.exp(-0.5 * (grid[:, None] - f(grid)[None, :]) ** 2 / Q)
    sq_err = np.zeros(5)
    for s in range(seeds):
        x0 = prior.rvs(random_state=np.random.default_rng(s))
        traj = simulate(m, [x0], K, RngStream(s))
        p = p0.copy()
        for y in traj.outputs[:, 0]:
            p = T @ p
            p /= p.sum()
            loglik = -0.5 * (y - h(grid)) ** 2 / R
            p = p * np.exp(loglik - loglik.max())
            p /= p.sum()
        oracle = p @ grid
        for i, kernels in enumerate(range(1, 6)):
            gsf = GaussianSumFilter(m, _quantile_fit(grid, p0, kernels))
            for j, y in enumerate(traj.outputs):
                est = gsf.step(y, j + 1)
            sq_err[i] += (est.mean[0] - oracle) ** 2 / seeds
    assert np.all(np.diff(np.sqrt(sq_err)) < 0)
