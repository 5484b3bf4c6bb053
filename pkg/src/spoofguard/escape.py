"""Escape time and the escape controllers.

Two MPC variants share one single-shooting formulation over the input
sequence (states are affine in the inputs for the linear plant):

* hard exit constraint at the escape deadline, tightened by a tube margin
  (a zero margin gives the nominal, uncertainty-free program);
* soft exit through a repulsive potential charged from the deadline on.

Input-norm bounds are handled by projection, velocity-norm bounds and the
hard exit constraint by the augmented-Lagrangian outer loop in
:mod:`spoofguard.optim`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alt import AttackerEstimate
from .errors import ConfigurationError, DomainError, SingularityError
from .estimator import EstimatorState, predict_covariance_gps_denied
from .model import EPS_DIST, SystemModel
from .optim import SolverOptions, minimize
from .stats import chi2_quantile, normal_quantile


# ---------------------------------------------------------------------------
# escape time
# ---------------------------------------------------------------------------

def escape_time(P_at_attack, zeta, alpha: float, model: SystemModel, max_steps: int = 100_000, df: int | None = None) -> int:
    """Steps after GPS loss until the error may exceed the tolerable distance.

    Returns the smallest ``j >= 0`` for which ``zeta^T P_j^{-1} zeta`` drops
    below ``chi2_df(alpha)``, with ``P_j`` the IMU-only covariance ``j`` steps
    after the attack and ``df = n`` by default.

    A scalar ``zeta`` is read in the worst direction, i.e. along the top
    eigenvector of ``P_j``, which turns the test into
    ``lambda_max(P_j) > zeta**2 / chi2_df(alpha)``. A vector ``zeta`` is used
    as given.
    """
    df = model.n if df is None else df
    crit = chi2_quantile(df, alpha)
    zeta_arr = np.asarray(zeta, dtype=float)
    if np.any(zeta_arr <= 0):
        raise DomainError("tolerable error distance must be positive")
    scalar = zeta_arr.ndim == 0

    def reached(P):
        if scalar:
            return np.linalg.eigvalsh(P)[-1] > float(zeta_arr) ** 2 / crit
        return float(zeta_arr @ np.linalg.solve(P, zeta_arr)) < crit

    P = np.asarray(P_at_attack, dtype=float)
    if reached(P):
        return 0
    # march in chunks so long horizons stay cheap
    done = 0
    chunk = 64
    while done < max_steps:
        seq = predict_covariance_gps_denied(P, min(chunk, max_steps - done), model)
        for j in range(1, seq.shape[0]):
            if reached(seq[j]):
                return done + j
        done += seq.shape[0] - 1
        P = seq[-1]
        chunk = min(chunk * 2, 4096)
    raise DomainError(f"tolerable error not exceeded within {max_steps} steps")


# ---------------------------------------------------------------------------
# constraint tightening and soft penalty
# ---------------------------------------------------------------------------

def _pos_block(P, k: int) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return P[:k, :k]


def tube_backoff(P_uav, P_att, uav_pos, att_pos, gamma: float, pos_index=(0, 1)) -> float:
    """First-order margin for ``P[dist - r_effect > 0] > gamma``.

    The distance is linearized along the unit vector from attacker to UAV;
    its standard deviation under the two (independent) position covariances
    is scaled by the standard normal ``gamma`` quantile.

    ``P_uav`` may be a full state covariance (its ``pos_index`` block is used)
    and ``P_att`` the tracker covariance (its leading position block is used).
    """
    if not 0.5 < gamma < 1.0:
        raise DomainError(f"confidence gamma must lie in (0.5, 1), got {gamma}")
    uav_pos = np.asarray(uav_pos, dtype=float).ravel()
    att_pos = np.asarray(att_pos, dtype=float).ravel()
    k = uav_pos.shape[0]
    P_uav = np.asarray(P_uav, dtype=float)
    if P_uav.shape[0] != k:
        idx = list(pos_index)
        P_uav = P_uav[np.ix_(idx, idx)]
    P_att = _pos_block(P_att, k)
    diff = uav_pos - att_pos
    dist = np.linalg.norm(diff)
    if dist < EPS_DIST:
        raise SingularityError("UAV and attacker positions coincide")
    g = diff / dist
    var = float(g @ (P_uav + P_att) @ g)
    return normal_quantile(gamma) * np.sqrt(max(var, 0.0))


def repulsive_potential(D: float, r_effect: float, beta: float) -> float:
    """``beta/2 * (1/D - 1/r_effect)**2`` inside the effective range, zero outside."""
    if D <= EPS_DIST:
        raise SingularityError(f"distance {D:g} m below guard radius")
    if D > r_effect:
        return 0.0
    return 0.5 * beta * (1.0 / D - 1.0 / r_effect) ** 2


def repulsive_gradient(D: float, r_effect: float, beta: float) -> float:
    """Derivative of :func:`repulsive_potential` with respect to ``D``."""
    if D <= EPS_DIST:
        raise SingularityError(f"distance {D:g} m below guard radius")
    if D > r_effect:
        return 0.0
    return -beta * (1.0 / D - 1.0 / r_effect) / D**2


# ---------------------------------------------------------------------------
# MPC programs
# ---------------------------------------------------------------------------

@dataclass
class EscapeProblem:
    """Parameters of one escape episode.

    ``k_a`` is the detection step; the exit deadline is pinned to the
    absolute index ``k_a + k_esc`` and the horizon ends at ``k_a + N``.
    """

    k_a: int
    k_esc: int
    N: int
    Q: np.ndarray
    R: np.ndarray
    x_goal: np.ndarray
    r_effect: float
    beta: float = 50_000.0
    gamma: float = 0.95
    v_max: float = 5.0
    u_max: float = 2.0
    min_horizon: int = 20

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.x_goal = np.asarray(self.x_goal, dtype=float).ravel()
        if not (self.N >= self.k_esc >= 0):
            raise ConfigurationError(f"need N >= k_esc >= 0, got N={self.N}, k_esc={self.k_esc}")
        if not self.beta > 0:
            raise ConfigurationError("potential scaling beta must be positive")
        if not 0.5 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (0.5, 1)")
        for name in ("Q", "R"):
            M = getattr(self, name)
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
                raise ConfigurationError(f"{name} must be symmetric positive definite")

    def horizon(self, k: int) -> int:
        """Number of inputs planned at step ``k`` (inputs ``k .. k_a + N``)."""
        return max(self.k_a + self.N - k + 1, self.min_horizon, 1)

    def deadline_offset(self, k: int) -> int:
        """Index (1-based, into the predicted states) of the pinned exit deadline."""
        return max(self.k_a + self.k_esc - k, 1)


@dataclass
class ControlPlan:
    u_seq: np.ndarray
    x_seq: np.ndarray
    feasible: bool
    solver_stats: dict = field(default_factory=dict)

    @property
    def first_input(self) -> np.ndarray:
        return self.u_seq[0]


class _Rollout:
    """Dense affine map from stacked inputs to stacked predicted states."""

    def __init__(self, model: SystemModel, x0, H: int):
        n, m = model.n, model.m_u
        self.n, self.m, self.H = n, m, H
        A, B = model.A, model.B
        powers = [np.eye(n)]
        for _ in range(H):
            powers.append(A @ powers[-1])
        self.free = np.concatenate([powers[j] @ x0 for j in range(1, H + 1)])
        G = np.zeros((H * n, H * m))
        for j in range(1, H + 1):  # state x_j
            for i in range(j):  # input u_i
                G[(j - 1) * n : j * n, i * m : (i + 1) * m] = powers[j - 1 - i] @ B
        self.G = G
        self.x0 = np.asarray(x0, dtype=float)

        self._last = (None, None)

    def states(self, z: np.ndarray) -> np.ndarray:
        # objective and constraints are evaluated at the same point in turn
        key, X = self._last
        if key is not None and np.array_equal(key, z):
            return X
        X = (self.free + self.G @ z).reshape(self.H, self.n)
        self._last = (z.copy(), X)
        return X


def _project_balls(z: np.ndarray, m: int, radius: float) -> np.ndarray:
    U = z.reshape(-1, m)
    norms = np.sqrt(np.einsum("ij,ij->i", U, U))
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return (U * scale[:, None]).ravel()


class _EscapeNLP:
    """Objective and constraints of one escape solve at step ``k``."""

    def __init__(self, model, x0, att_pos, prob: EscapeProblem, k: int, *, potential: bool, margin: float | None):
        self.model = model
        self.prob = prob
        self.H = prob.horizon(k)
        self.roll = _Rollout(model, x0, self.H)
        self.G_vel = self.roll.G.reshape(self.H, model.n, -1)[:, list(model.vel_index), :]
        self.pos = list(model.pos_index)
        self.vel = list(model.vel_index)
        self.att = np.asarray(att_pos, dtype=float).ravel()
        self.QQ = prob.Q
        self.RR = prob.R
        self.goal = prob.x_goal
        self.potential = potential
        self.margin = margin
        self.J = min(prob.deadline_offset(k), self.H)
        # predicted states (1-based j) with absolute index >= k_a + k_esc
        first = prob.k_a + prob.k_esc - k
        self.pot_from = max(first, 1)

    # -- objective ---------------------------------------------------------
    def tracking(self, z):
        X = self.roll.states(z)
        U = z.reshape(self.H, -1)
        E = X - self.goal
        f = float(np.einsum("ij,jk,ik->", E, self.QQ, E) + np.einsum("ij,jk,ik->", U, self.RR, U))
        gX = 2.0 * E @ self.QQ
        gU = 2.0 * U @ self.RR
        return f, X, gX, gU

    def potential_terms(self, X):
        gX = np.zeros_like(X)
        if not self.potential:
            return 0.0, gX
        P = X[self.pot_from - 1 :, self.pos] - self.att
        D = np.sqrt(np.einsum("ij,ij->i", P, P))
        if D.size and D.min() <= EPS_DIST:
            raise SingularityError(f"planned distance {D.min():g} m below guard radius")
        inside = D <= self.prob.r_effect
        excess = np.where(inside, 1.0 / D - 1.0 / self.prob.r_effect, 0.0)
        cost = 0.5 * self.prob.beta * float(excess @ excess)
        dU = -self.prob.beta * excess / D**2
        gX[self.pot_from - 1 :, self.pos] = (dU / D)[:, None] * P
        return cost, gX

    def objective(self, z):
        f, X, gX, gU = self.tracking(z)
        pc, gP = self.potential_terms(X)
        grad = self.roll.G.T @ (gX + gP).ravel() + gU.ravel()
        return f + pc, grad

    # -- constraints ---------------------------------------------------------
    def constraints(self, z):
        X = self.roll.states(z)
        vmax = self.prob.v_max
        V = X[:, self.vel]
        c_vel = (np.sum(V**2, axis=1) - vmax**2) / (2.0 * vmax)
        rows = [c_vel]
        jac = [np.einsum("jv,jvz->jz", V / vmax, self.G_vel)]
        if self.margin is not None:
            p = X[self.J - 1, self.pos] - self.att
            D = max(np.linalg.norm(p), EPS_DIST)
            rows.append(np.array([self.prob.r_effect + self.margin - D]))
            gx = np.zeros(self.H * self.roll.n)
            gx[(self.J - 1) * self.roll.n + np.array(self.pos)] = -p / D
            jac.append((gx @ self.roll.G)[None, :])
        return np.concatenate(rows), np.vstack(jac)

    def project(self, z):
        return _project_balls(z, self.roll.m, self.prob.u_max)

    def plan(self, res, feasible, **extra) -> ControlPlan:
        U = res.z.reshape(self.H, -1)
        X = np.vstack([self.roll.x0, self.roll.states(res.z)])
        pc, _ = self.potential_terms(X[1:]) if self.potential else (0.0, None)
        stats = {
            "iterations": res.iterations,
            "outer_iterations": res.outer_iterations,
            "grad_norm": res.grad_norm,
            "violation": res.violation,
            "objective": res.f,
            "potential_cost": pc,
            "converged": res.converged,
            "merit_history": res.merit_history,
        }
        stats.update(extra)
        return ControlPlan(u_seq=U, x_seq=X, feasible=feasible, solver_stats=stats)


def warm_start(model: SystemModel, x0, prob: EscapeProblem, H: int, att_pos=None, gains=(0.2, 0.9)) -> np.ndarray:
    """Tracking controls toward the goal, plus an outward push when ``att_pos`` is given."""
    kp, kd = gains
    pos, vel = list(model.pos_index), list(model.vel_index)
    x = np.asarray(x0, dtype=float).copy()
    U = np.zeros((H, model.m_u))
    for i in range(H):
        v_des = kp / kd * (prob.x_goal[pos] - x[pos])
        nv = np.linalg.norm(v_des)
        if nv > prob.v_max:
            v_des *= prob.v_max / nv
        u = kd * (v_des - x[vel])
        if att_pos is not None:
            d = x[pos] - att_pos
            nd = np.linalg.norm(d)
            if nd < prob.r_effect and nd > EPS_DIST:
                u = u + 2.0 * prob.u_max * d / nd
        nu = np.linalg.norm(u)
        if nu > prob.u_max:
            u *= prob.u_max / nu
        U[i] = u
        x = model.A @ x + model.B @ u
    return U


def _shifted(u_init, H: int, m: int):
    if u_init is None:
        return None
    U = np.asarray(u_init, dtype=float).reshape(-1, m)
    if U.shape[0] >= H:
        return U[:H]
    pad = np.repeat(U[-1:], H - U.shape[0], axis=0) if U.shape[0] else np.zeros((H - U.shape[0], m))
    return np.vstack([U, pad])


def _exit_reachable(model: SystemModel, x0, att_pos, J: int, required: float, prob: EscapeProblem) -> bool:
    """Cheap certificate: can the UAV be ``required`` metres from the attacker after ``J`` steps?

    Bounds the travelled distance by the input and velocity limits of a
    double integrator with step ``model.dt``.
    """
    x0 = np.asarray(x0, dtype=float)
    pos, vel = list(model.pos_index), list(model.vel_index)
    if len(vel) != len(pos):
        return True
    dt = model.dt
    v0 = float(np.linalg.norm(x0[vel]))
    reach = 0.0
    for i in range(J):
        speed = v0 + i * dt * prob.u_max
        if i >= 1:
            speed = min(speed, max(prob.v_max, v0))
        reach += dt * speed
    d0 = float(np.linalg.norm(x0[pos] - att_pos))
    return d0 + reach >= required


def solve_escape_tube(
    est: EstimatorState,
    attacker_est: AttackerEstimate,
    prob: EscapeProblem,
    model: SystemModel,
    k: int | None = None,
    P_escape=None,
    u_init=None,
    options: SolverOptions | None = None,
    margin: float | None = None,
) -> ControlPlan:
    """Hard-exit MPC with tube margin at the pinned deadline.

    ``P_escape`` is the predicted UAV covariance at the deadline (defaults to
    ``est.P``). Passing ``margin`` overrides the computed backoff; ``0`` gives
    the nominal program. Returns ``feasible=False`` when the exit cannot be
    reached (by the reachability bound or by the solver), never raises for it.
    """
    k = prob.k_a if k is None else k
    att = attacker_est.position
    x0 = est.x_hat
    if margin is None:
        P_u = est.P if P_escape is None else P_escape
        margin = tube_backoff(P_u, attacker_est.P_a, model.position(x0), att, prob.gamma, model.pos_index)
    nlp = _EscapeNLP(model, x0, att, prob, k, potential=False, margin=margin)
    required = prob.r_effect + margin
    if not _exit_reachable(model, x0, att, nlp.J, required, prob):
        U = warm_start(model, x0, prob, nlp.H)
        X = np.vstack([x0, nlp.roll.states(U.ravel())])
        return ControlPlan(U, X, False, {"iterations": 0, "margin": margin, "reason": "unreachable", "violation": np.inf, "objective": np.nan})
    U0 = _shifted(u_init, nlp.H, model.m_u)
    if U0 is None:
        U0 = warm_start(model, x0, prob, nlp.H, att_pos=att)
    opts = options or SolverOptions()
    res = minimize(nlp.objective, U0.ravel(), nlp.project, nlp.constraints, opts)
    feasible = res.violation <= max(opts.ctol, 1e-3)
    return nlp.plan(res, feasible, margin=margin)


def solve_escape_potential(
    est: EstimatorState,
    attacker_est: AttackerEstimate,
    prob: EscapeProblem,
    model: SystemModel,
    k: int | None = None,
    u_init=None,
    options: SolverOptions | None = None,
) -> ControlPlan:
    """Soft-exit MPC: tracking cost plus repulsive potential after the deadline.

    Always returns the best plan found; ``solver_stats['potential_cost']``
    reports what is left of the penalty along the plan.
    """
    k = prob.k_a if k is None else k
    att = attacker_est.position
    x0 = est.x_hat
    nlp = _EscapeNLP(model, x0, att, prob, k, potential=True, margin=None)
    U0 = _shifted(u_init, nlp.H, model.m_u)
    if U0 is None:
        U0 = warm_start(model, x0, prob, nlp.H, att_pos=att)
    res = minimize(nlp.objective, U0.ravel(), nlp.project, nlp.constraints, options or SolverOptions())
    return nlp.plan(res, True)


def rollout(model: SystemModel, x0, U) -> np.ndarray:
    """States ``x_0 .. x_H`` under inputs ``U`` (no noise)."""
    X = [np.asarray(x0, dtype=float)]
    for u in np.atleast_2d(U):
        X.append(model.A @ X[-1] + model.B @ u)
    return np.array(X)
