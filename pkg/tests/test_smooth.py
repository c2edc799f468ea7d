import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smooth import bump, max_cutoff_slope, radial_cutoff, ramp, step, window_left, window_middle, window_right


def _fd(fn, x, h=1e-6):
    return (fn(x + h)[0] - fn(x - h)[0]) / (2 * h)


def test_step_endpoints():
    v, d = step(np.array([-1.0, 0.0, 1.0, 2.0]))
    np.testing.assert_array_equal(v, [0.0, 0.0, 1.0, 1.0])
    np.testing.assert_array_equal(d, [0.0, 0.0, 0.0, 0.0])
    assert step(np.array([0.5]))[0][0] == pytest.approx(0.5)


@given(st.floats(min_value=0.05, max_value=0.95))
def test_step_derivative(x):
    x = np.array([x])
    assert step(x)[1][0] == pytest.approx(_fd(step, x)[0], rel=1e-5, abs=1e-8)


def test_ramp_and_cutoff():
    r = np.linspace(0.0, 0.03, 301)
    v, dv = radial_cutoff(r, 0.01, 0.02)
    assert (v[r <= 0.01] == 1.0).all()
    assert (v[r >= 0.02] == 0.0).all()
    assert (dv <= 0).all()
    assert np.abs(dv).max() <= max_cutoff_slope(0.01, 0.02) * (1 + 1e-6)
    x = np.array([0.015])
    assert ramp(x, 0.01, 0.02)[1][0] == pytest.approx(_fd(lambda y: ramp(y, 0.01, 0.02), x, 1e-9)[0], rel=1e-4)


def test_bump_value_and_gradient():
    d = np.array([[0.0, 0.0], [0.01, -0.02], [0.05, 0.0]])
    v, g = bump(d, 0.04)
    assert v[0] == pytest.approx(1.0)
    np.testing.assert_array_equal(g[0], [0.0, 0.0])
    assert v[2] == 0.0
    h = 1e-8
    fd = [(bump(d[1:2] + e, 0.04)[0][0] - bump(d[1:2] - e, 0.04)[0][0]) / (2 * h) for e in np.eye(2) * h]
    np.testing.assert_allclose(g[1], fd, rtol=1e-5)


def test_windows_partition_the_interval():
    tau = np.linspace(0.0, 1.0, 1001)
    left, right, mid = window_left(tau)[0], window_right(tau)[0], window_middle(tau)[0]
    assert (left[tau <= 0.25] == 1.0).all() and (left[tau >= 0.4] == 0.0).all()
    assert (right[tau <= 0.6] == 0.0).all() and (right[tau >= 0.75] == 1.0).all()
    assert (mid[(tau >= 0.35) & (tau <= 0.65)] == 1.0).all()
    assert (mid[(tau <= 0.2) | (tau >= 0.8)] == 0.0).all()
    # left and right never overlap
    assert (left * right == 0.0).all()
