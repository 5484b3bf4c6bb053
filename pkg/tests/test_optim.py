import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize as sp_minimize

from spoofguard.optim import SolverOptions, minimize


def quad(a):
    a = np.asarray(a, dtype=float)

    def f(z):
        r = z - a
        return float(r @ r), 2.0 * r

    return f


def halfspace(c, b):
    c = np.asarray(c, dtype=float)

    def g(z):
        return np.array([c @ z - b]), c[None, :]

    return g


def test_unconstrained_quadratic():
    res = minimize(quad([1.0, -2.0, 3.0]), np.zeros(3), options=SolverOptions(gtol=1e-10))
    assert res.converged
    np.testing.assert_allclose(res.z, [1.0, -2.0, 3.0], atol=1e-8)


@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(-2, 2), min_size=3, max_size=3).filter(lambda c: np.linalg.norm(c) > 0.1),
    st.floats(-3, 3),
)
def test_halfspace_projection_oracle(a, c, b):
    a, c = np.array(a), np.array(c)
    # closed form: Euclidean projection of a onto {c.z <= b}
    z_star = a - max(0.0, (c @ a - b) / (c @ c)) * c
    res = minimize(quad(a), np.zeros(3), constraints=halfspace(c, b), options=SolverOptions(gtol=1e-9, ctol=1e-9, max_iter=5000))
    np.testing.assert_allclose(res.z, z_star, atol=1e-5)


def test_box_and_constraint_match_slsqp():
    a = np.array([2.0, 1.5, -0.5])
    c, b = np.array([1.0, 1.0, 1.0]), 1.0

    def project(z):
        return np.clip(z, -1.0, 1.0)

    res = minimize(quad(a), np.zeros(3), project, halfspace(c, b), SolverOptions(gtol=1e-9, ctol=1e-9, max_iter=5000))
    ref = sp_minimize(
        lambda z: float((z - a) @ (z - a)),
        np.zeros(3),
        method="SLSQP",
        bounds=[(-1, 1)] * 3,
        constraints=[{"type": "ineq", "fun": lambda z: b - c @ z}],
        options={"ftol": 1e-14},
    )
    np.testing.assert_allclose(res.z, ref.x, atol=1e-5)
    assert res.violation <= 1e-9
    assert np.all(np.abs(res.z) <= 1.0)


def test_merit_monotone_within_each_inner_solve():
    a = np.array([3.0, 3.0])

    def ball(z):
        return np.array([z @ z - 1.0]), 2.0 * z[None, :]

    res = minimize(quad(a), np.array([0.1, -0.2]), constraints=ball, options=SolverOptions(gtol=1e-8, ctol=1e-8))
    assert res.converged
    np.testing.assert_allclose(res.z, a / np.linalg.norm(a), atol=1e-5)
    for rounds in res.merit_history:
        assert np.all(np.diff(rounds) <= 1e-12)
    assert res.multipliers[0] == pytest.approx(np.linalg.norm(a) - 1.0, rel=1e-3)


def test_iteration_cap_respected():
    def rosen(z):
        x, y = z
        f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
        g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
        return f, g

    res = minimize(rosen, np.array([-1.2, 1.0]), options=SolverOptions(max_iter=7, gtol=1e-12))
    assert res.iterations <= 7
    assert not res.converged


def test_start_is_projected():
    seen = []

    def f(z):
        seen.append(z.copy())
        return float(z @ z), 2 * z

    minimize(f, np.array([5.0, -5.0]), lambda z: np.clip(z, 1.0, 2.0), options=SolverOptions(max_iter=3))
    assert all(np.all((s >= 1.0) & (s <= 2.0)) for s in seen)
