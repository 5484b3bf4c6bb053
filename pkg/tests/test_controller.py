import numpy as np
import pytest
from hypothesis import given, strategies as st

from spoofguard.controller import clamp_norm, detour_goal, robust_control

GAINS = (0.2, 0.9)
GOAL = np.array([300.0, 300.0, 0.0, 0.0])


def test_zero_at_goal(model):
    np.testing.assert_array_equal(robust_control(GOAL, GOAL, GAINS, model), np.zeros(2))


def test_saturates_at_exactly_u_max(model):
    u = robust_control(np.zeros(4), GOAL, GAINS, model, u_max=2.0)
    assert np.linalg.norm(u) == pytest.approx(2.0, abs=1e-12)


def test_pure_velocity_is_damped(model):
    x = np.array([300.0, 300.0, 0.3, -0.4])
    u = robust_control(x, GOAL, GAINS, model)
    np.testing.assert_allclose(u, -0.9 * x[2:], atol=1e-12)
    assert u @ x[2:] < 0


def test_unsaturated_pd_law(model):
    x = np.array([299.0, 301.0, 0.1, 0.0])
    u = robust_control(x, GOAL, GAINS, model, v_max=5.0)
    np.testing.assert_allclose(u, 0.2 * (GOAL[:2] - x[:2]) - 0.9 * x[2:], atol=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_norm_bound(x):
    u = robust_control(np.array(x), GOAL, GAINS, _model(), u_max=2.0, v_max=5.0)
    assert np.linalg.norm(u) <= 2.0 + 1e-9


def _model():
    from spoofguard.model import reference_model

    return reference_model()


def test_batched_rows_match_single(model, rng):
    X = rng.normal(scale=50.0, size=(6, 4))
    U = robust_control(X, GOAL, GAINS, model, v_max=5.0)
    for x, u in zip(X, U):
        np.testing.assert_allclose(u, robust_control(x, GOAL, GAINS, model, v_max=5.0))


def test_clamp_norm_rows():
    v = np.array([[3.0, 4.0], [0.3, 0.4]])
    out = clamp_norm(v, 1.0)
    np.testing.assert_allclose(out, [[0.6, 0.8], [0.3, 0.4]])


def test_detour_keeps_clear_path_unchanged():
    g = np.array([300.0, 300.0])
    np.testing.assert_array_equal(detour_goal([0.0, 0.0], g, [100.0, 0.0], 30.0), g)


def test_detour_bends_around_blocking_disc():
    p, g, c = np.array([0.0, 0.0]), np.array([300.0, 300.0]), np.array([100.0, 100.0])
    v = detour_goal(p, g, c, 35.0) - p
    assert np.linalg.norm(v) == pytest.approx(np.linalg.norm(g - p))
    # the new heading is tangent to the disc: closest approach equals the radius
    h = v / np.linalg.norm(v)
    closest = (c - p) - ((c - p) @ h) * h
    assert np.linalg.norm(closest) == pytest.approx(35.0, rel=1e-9)


def test_detour_inside_disc_points_outward():
    p, c = np.array([95.0, 100.0]), np.array([100.0, 100.0])
    v = detour_goal(p, [300.0, 300.0], c, 35.0) - p
    assert v @ (p - c) > 0
