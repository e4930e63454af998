import numpy as np
import pytest
from scipy.linalg import expm

from bayesest.core import RngStream
from bayesest.errors import (
    ContractError,
    DivergenceError,
    LinearizationError,
    ParameterError,
)
from bayesest.model import (
    LinearModel,
    StateSpaceModel,
    augment_for_sspe,
    constant_input,
    discretize,
    discretize_jacobian,
    numerical_jacobian,
    simulate,
)
from bayesest.motor import (
    SELECTOR,
    MotorParams,
    motor_field,
    motor_field_jacobian,
    motor_measurement,
    motor_model,
    voltage_input,
)


def scalar_model(F=0.5, Q=0.0, R=0.0):
    return LinearModel([[F]], [[1.0]], [[Q]], [[R]]).to_model()


# ---------------------------------------------------------------- simulate


def test_simulate_noise_free_fixed_point():
    c = np.array([1.5, -2.0])
    m = StateSpaceModel(2, 1, lambda x, k, u: x, lambda x, k: np.array([x[0] + x[1]]), np.zeros((2, 2)), np.zeros((1, 1)))
    tr = simulate(m, c, 4, RngStream(3))
    assert np.all(tr.states == c)
    assert np.all(tr.outputs == -0.5)


def test_simulate_scalar_hand_iteration():
    tr = simulate(scalar_model(0.5), [1.0], 3, RngStream(0))
    assert np.array_equal(tr.states.ravel(), [1.0, 0.5, 0.25, 0.125])
    assert np.array_equal(tr.outputs.ravel(), [0.5, 0.25, 0.125])


def test_simulate_deterministic_per_seed():
    m = LinearModel(np.array([[0.9, 0.1], [0.0, 0.8]]), [[1.0, 0.0]], 0.1 * np.eye(2), [[0.5]]).to_model()
    a = simulate(m, [0.0, 1.0], 50, RngStream(42))
    b = simulate(m, [0.0, 1.0], 50, RngStream(42))
    c = simulate(m, [0.0, 1.0], 50, RngStream(43))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.outputs, b.outputs)
    assert not np.array_equal(a.states, c.states)
    assert a.seed == 42


def test_simulate_noise_free_identical_across_seeds():
    m = scalar_model(0.9)
    a = simulate(m, [2.0], 20, RngStream(1))
    b = simulate(m, [2.0], 20, RngStream(999, 5))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.outputs, b.outputs)


def test_simulate_noise_statistics():
    m = LinearModel([[0.0]], [[1.0]], [[2.0]], [[0.5]]).to_model()
    tr = simulate(m, [0.0], 20000, RngStream(8))
    assert np.var(tr.states[1:]) == pytest.approx(2.0, rel=0.05)
    assert np.var(tr.outputs - tr.states[1:]) == pytest.approx(0.5, rel=0.05)


def test_simulate_with_inputs():
    m = StateSpaceModel(1, 1, lambda x, k, u: x + u, lambda x, k: x, [[0.0]], [[0.0]])
    tr = simulate(m, [0.0], 3, RngStream(0), inputs=constant_input(2.0))
    assert np.array_equal(tr.states.ravel(), [0, 2, 4, 6])
    assert tr.input(1)[0] == 2.0


def test_simulate_errors():
    m = scalar_model(0.5)
    with pytest.raises(ContractError):
        simulate(m, [1.0], 0, RngStream(0))
    with pytest.raises(ContractError):
        simulate(m, [1.0, 2.0], 3, RngStream(0))
    blow = StateSpaceModel(1, 1, lambda x, k, u: x * 1e200, lambda x, k: x, [[0.0]], [[1.0]])
    with pytest.raises(DivergenceError) as info:
        simulate(blow, [1.0], 10, RngStream(0))
    assert info.value.step == 2


def test_model_contracts():
    with pytest.raises(ContractError):
        StateSpaceModel(1, 1, lambda x, k, u: x, lambda x, k: x, [[-1.0]], [[1.0]])
    with pytest.raises(ContractError):
        LinearModel(np.ones((2, 3)), np.ones((1, 2)), np.eye(2), np.eye(1))


def test_model_is_pure():
    m = motor_model()
    x = np.array([0.5, -1.0, 0.2, 0.1, 3.0])
    u = np.array([10.0, -5.0])
    assert np.array_equal(m.transition(x, 0, u), m.transition(x, 0, u))
    assert np.array_equal(m.measure(x), m.measure(x))


def test_linear_model_round_trip():
    lin = LinearModel([[0.9, 0.2], [0.0, 0.7]], [[1.0, 0.5]], np.eye(2), [[2.0]])
    m = lin.to_model()
    x = np.array([1.0, -2.0])
    assert np.allclose(m.transition(x), lin.F @ x)
    assert np.array_equal(m.F(x), lin.F) and np.array_equal(m.H(x), lin.H)
    X = np.arange(6.0).reshape(3, 2)
    assert np.allclose(m.transition_batch(X), X @ lin.F.T)


def test_finite_difference_fallback_and_failure():
    m = StateSpaceModel(2, 1, lambda x, k, u: np.sin(x), lambda x, k: np.array([x[0] * x[1]]), np.eye(2), [[1.0]])
    x = np.array([0.3, -0.4])
    assert np.allclose(m.F(x), np.diag(np.cos(x)), atol=1e-8)
    assert np.allclose(m.H(x), [[x[1], x[0]]], atol=1e-8)
    bad = StateSpaceModel(1, 1, lambda x, k, u: np.sqrt(x), lambda x, k: x, [[1.0]], [[1.0]])
    with pytest.raises(LinearizationError), np.errstate(invalid="ignore"):
        bad.F(np.array([0.0]))


# ---------------------------------------------------------------- discretize


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_discretize_zero_field(method):
    f = discretize(lambda x, u: np.zeros_like(x), 0.37, method)
    x = np.array([1.0, -2.0])
    assert np.array_equal(f(x), x)


def test_discretize_hand_steps():
    ode = lambda x, u: -x
    assert discretize(ode, 0.1, "euler")(np.array([1.0]))[0] == pytest.approx(0.9, abs=1e-15)
    expected = 1 - 0.1 + 0.005 - 0.1**3 / 6 + 0.1**4 / 24
    assert discretize(ode, 0.1, "rk4")(np.array([1.0]))[0] == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.9048375, abs=1e-7)


def test_rk4_matches_matrix_exponential():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    f = discretize(lambda x, u: x @ A.T, 0.01, "rk4")
    E = expm(0.01 * A)
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(20, 2)):
        assert np.abs(f(x) - E @ x).max() <= 1e-10


def test_discretize_errors():
    with pytest.raises(ParameterError):
        discretize(lambda x, u: x, 0.0)
    with pytest.raises(ParameterError):
        discretize(lambda x, u: x, 0.1, "heun")


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_discretized_jacobian_matches_finite_differences(method):
    p = MotorParams()
    ode = lambda x, u: motor_field(x, u, p)
    jac = lambda x, u: motor_field_jacobian(x, u, p)
    f = discretize(ode, 1e-3, method)
    J = discretize_jacobian(ode, jac, 1e-3, method)
    rng = np.random.default_rng(4)
    u = np.array([100.0, -50.0])
    for x in rng.normal(scale=2.0, size=(20, 5)):
        Jn = numerical_jacobian(lambda z: f(z, 0, u), x)
        assert np.allclose(J(x, 0, u), Jn, rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------- motor


def test_motor_field_origin():
    p = MotorParams()
    out = motor_field(np.zeros(5), np.zeros(2), p)
    assert np.allclose(out, [0, 0, 0, 0, -p.T_L / p.J])
    p0 = MotorParams(T_L=0.0)
    assert np.array_equal(motor_field(np.zeros(5), np.zeros(2), p0), np.zeros(5))


def test_motor_field_substitution_oracle():
    # values from symbolic substitution into the printed model (exact rationals)
    p = MotorParams(T_L=0.0)
    out = motor_field(np.array([1.0, 0.0, 1.0, 0.0, 0.0]), np.zeros(2), p)
    assert np.allclose(out, [26.996805041935192, 0.0, -2.0, 0.0, 0.0], rtol=1e-12, atol=1e-12)
    out = motor_field(np.array([0.5, -1.2, 0.3, 0.7, 2.0]), np.array([10.0, -20.0]), MotorParams())
    expected = [180.84006236878750, -286.47621917768434, -1.9708154506437768, -1.0772532188841202, -188.32852392740483]
    assert np.allclose(out, expected, rtol=1e-12)


def test_motor_derived_parameters():
    p = MotorParams()
    assert p.sigma == pytest.approx(p.L_s * (1 - p.L_m**3 / (p.L_s * p.L_r)), rel=1e-15)
    assert p.alpha == p.R_r / p.L_r
    assert p.beta == pytest.approx(p.L_m / (p.sigma * p.L_r))
    assert p.gamma == pytest.approx(p.R_s / p.sigma + p.alpha * p.beta * p.L_m)
    assert p.mu == pytest.approx(3 * p.L_m / (2 * p.L_r))
    assert min(p.sigma, p.alpha, p.beta, p.gamma, p.mu) > 0
    with pytest.raises(ParameterError):
        MotorParams(L_s=-1.0)


def test_motor_field_linear_in_input():
    p = MotorParams()
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=5)
        u1, u2 = rng.normal(scale=100, size=2), rng.normal(scale=100, size=2)
        lhs = motor_field(x, u1 + u2, p) - motor_field(x, u2, p)
        rhs = motor_field(x, u1, p) - motor_field(x, np.zeros(2), p)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


def test_motor_field_vectorized():
    p = MotorParams()
    X = np.random.default_rng(3).normal(size=(7, 5))
    u = np.array([1.0, 2.0])
    assert np.allclose(motor_field(X, u, p), np.array([motor_field(x, u, p) for x in X]))


def test_motor_jacobians_match_finite_differences():
    m = motor_model()
    rng = np.random.default_rng(5)
    u = np.array([200.0, -100.0])
    for x in rng.normal(scale=3.0, size=(100, 5)):
        J = m.F(x, 0, u)
        Jn = numerical_jacobian(lambda z: m.transition(z, 0, u), x)
        assert np.abs(J - Jn).max() <= 1e-5 * max(1.0, np.abs(J).max())
        assert np.array_equal(m.H(x), SELECTOR)


def test_motor_measurement():
    assert np.array_equal(motor_measurement(np.array([1.0, 2, 3, 4, 5])), [1.0, 2.0])
    assert np.array_equal(motor_measurement(np.zeros(5)), [0.0, 0.0])
    with pytest.raises(ParameterError):
        motor_measurement(np.zeros(4))


def test_voltage_input_waveforms():
    assert np.allclose(voltage_input(0.0), [0.0, 0.0])
    assert voltage_input(0.005)[0] == pytest.approx(380.0, rel=1e-12)
    assert voltage_input(0.0025)[1] == pytest.approx(-380.0, rel=1e-12)


def test_motor_model_defaults():
    m = motor_model()
    assert np.array_equal(m.Q, 1e-4 * np.eye(5)) and np.array_equal(m.R, 1e-2 * np.eye(2))
    assert m.n_x == 5 and m.n_y == 2


# ---------------------------------------------------------------- SSPE


def _gain_model():
    base = LinearModel([[1.0]], [[1.0]], [[0.0]], [[1.0]]).to_model()
    f_par = lambda x, theta, k, u: theta * x  # unknown scalar gain
    return base, f_par


def test_sspe_frozen_parameters():
    base, f_par = _gain_model()
    m = augment_for_sspe(base, 1, f_par, [[0.0]])
    tr = simulate(m, [1.0, 0.9], 10, RngStream(0))
    assert np.all(tr.states[:, 1] == 0.9)
    assert np.allclose(tr.states[:, 0], 0.9 ** np.arange(11))


def test_sspe_matches_direct_construction():
    base, f_par = _gain_model()
    m = augment_for_sspe(base, 1, f_par, [[0.01]])
    direct = lambda z: np.array([z[1] * z[0], z[1]])  # bilinear in (x, theta)
    rng = np.random.default_rng(0)
    for z in rng.normal(size=(10, 2)):
        assert np.allclose(m.transition(z), direct(z))
        assert np.allclose(m.F(z), [[z[1], z[0]], [0.0, 1.0]], atol=1e-8)
        assert np.allclose(m.measure(z), z[:1])
    assert np.allclose(m.Q, np.diag([0.0, 0.01]))


def test_sspe_empty_augmentation():
    base, f_par = _gain_model()
    assert augment_for_sspe(base, 0, f_par, np.zeros((0, 0))) is base
