import numpy as np
from hypothesis import given, settings, strategies as st

from fbdsde.calculus import DiscretePath, backward_ito, forward_ito, ito_residual, loglog_slope
from fbdsde.noise import make_grid, sample_noise


def _path(grid, vals):
    return DiscretePath(grid, np.asarray(vals, dtype=float))


def test_forward_ito_examples():
    g = make_grid(1.0, 2)
    dW = np.array([1.0, -1.0])
    W = np.concatenate([[0], np.cumsum(dW)])
    assert np.allclose(forward_ito(_path(g, W), dW).values[-1], -1.0)
    assert np.allclose(forward_ito(_path(g, [3.0] * 3), dW).values, 3.0 * W)
    assert np.allclose(forward_ito(_path(g, [0.0] * 3), dW).values, 0.0)


def test_backward_ito_examples():
    g = make_grid(1.0, 2)
    dB = np.array([1.0, -1.0])
    B = np.array([0.0, 1.0, 0.0])
    out = backward_ito(_path(g, B), dB).values
    assert np.isclose(out[0], 1.0) and out[-1] == 0.0
    assert np.allclose(backward_ito(_path(g, [2.0] * 3), dB).values, 2.0 * (B[-1] - B))


def test_deterministic_residuals_vanish():
    g = make_grid(1.0, 8)
    nb = sample_noise(g, 1, 1, 50, 0)
    zero = _path(g, np.zeros(9))
    assert ito_residual(1.3, zero, zero, zero, nb).max_abs == 0.0
    beta = _path(g, np.full(9, -0.7))
    assert ito_residual(1.3, beta, zero, zero, nb).max_abs < 1e-13


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), N=st.integers(1, 20))
def test_riemann_case_exact(a, b, N):
    g = make_grid(1.0, N)
    nb = sample_noise(g, 1, 1, 4, 1)
    beta = _path(g, b * np.cos(g.nodes))
    zero = _path(g, np.zeros(N + 1))
    assert ito_residual(a, beta, zero, zero, nb).max_abs < 1e-11 * (1 + a * a + b * b)


@settings(max_examples=25, deadline=None)
@given(c1=st.floats(-2, 2), c2=st.floats(-2, 2))
def test_integrals_linear(c1, c2):
    g = make_grid(1.0, 5)
    rng = np.random.default_rng(0)
    dW, u, v = rng.standard_normal(5), rng.standard_normal(6), rng.standard_normal(6)
    lhs = forward_ito(_path(g, c1 * u + c2 * v), dW).values
    rhs = c1 * forward_ito(_path(g, u), dW).values + c2 * forward_ito(_path(g, v), dW).values
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_loglog_slope_recovers_power():
    x = np.array([0.1, 0.2, 0.4, 0.8])
    slope, se = loglog_slope(x, 3 * x ** 1.5)
    assert abs(slope - 1.5) < 1e-12 and se < 1e-10
