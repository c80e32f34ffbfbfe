import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from cclift.errors import BlowUp, StepBudgetExceeded
from cclift.integrate import DEFAULT_CONFIG, IntegratorConfig, dopri5


def test_exponential_growth():
    sol = dopri5(lambda t, y: y, 0.0, np.ones((1, 1)), 1.0)
    assert sol.y[0, 0] == pytest.approx(np.e, rel=1e-9)
    assert sol.t == 1.0


def test_backward_in_time():
    sol = dopri5(lambda t, y: y, 0.0, np.ones((1, 1)), -1.0)
    assert sol.y[0, 0] == pytest.approx(np.exp(-1.0), rel=1e-9)


def test_oscillator_batch_and_record():
    def f(t, y):
        return np.stack([y[:, 1], -y[:, 0]], axis=1)

    y0 = np.array([[1.0, 0.0], [0.0, 2.0]])
    sol = dopri5(f, 0.0, y0, 2 * np.pi, record=True)
    np.testing.assert_allclose(sol.y, y0, atol=1e-8)
    assert sol.times[0] == 0.0 and sol.times[-1] == pytest.approx(2 * np.pi)
    assert len(sol.states) == len(sol.times) == len(sol.steps) + 1
    assert sum(sol.steps) == pytest.approx(2 * np.pi, rel=1e-12)


def test_zero_span():
    y0 = np.array([[3.0]])
    sol = dopri5(lambda t, y: y, 1.0, y0, 1.0)
    np.testing.assert_array_equal(sol.y, y0)


def test_blowup_detected():
    with pytest.raises(BlowUp) as info:
        dopri5(lambda t, y: y**2, 0.0, np.ones((1, 1)), 2.0)
    assert 0.99 < info.value.t <= 1.0 + 1e-6


def test_step_budget():
    cfg = DEFAULT_CONFIG.replace(max_steps=3)
    with pytest.raises(StepBudgetExceeded):
        dopri5(lambda t, y: np.cos(50 * t) * np.ones_like(y), 0.0, np.zeros((1, 1)), 10.0, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.0)
    assert DEFAULT_CONFIG.replace(rel_tol=1e-6).rel_tol == 1e-6


def test_error_cols_restrict_control():
    # the second column is stiff-ish but excluded from control: steps follow column one only
    def f(t, y):
        return np.stack([np.ones(len(y)), -y[:, 1]], axis=1)

    sol = dopri5(f, 0.0, np.array([[0.0, 1.0]]), 1.0, error_cols=slice(0, 1))
    assert sol.y[0, 0] == pytest.approx(1.0, abs=1e-12)


@given(st.floats(-2, 2), st.floats(0.1, 3.0))
def test_matches_reference_solver(a, T):
    # independent oracle: scipy's DOP853 at tight tolerance
    def f(t, y):
        return np.stack([a * y[:, 1] + np.sin(t), -y[:, 0] - 0.1 * y[:, 1] ** 3], axis=1)

    y0 = np.array([[0.5, -0.3]])
    ours = dopri5(f, 0.0, y0, T).y[0]
    ref = solve_ivp(lambda t, y: f(t, y[None])[0], (0, T), y0[0], method="DOP853", rtol=1e-12, atol=1e-14).y[:, -1]
    np.testing.assert_allclose(ours, ref, atol=1e-8)
