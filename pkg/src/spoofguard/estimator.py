"""Resilient Kalman-like estimator with a closed-form trace-optimal gain.

The GPS and relative (IMU) channels are stacked as ``C = [C_G; C_I]`` with
``D = blockdiag(0, I)``; the relative channel observes ``C_I (x_k - x_{k-1})``
so its error term involves ``(CA - DC)``. Dropping the GPS block (``K_G = 0``)
gives the IMU-only filter used while GPS is distrusted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, NumericalError
from .model import SystemModel

RCOND_MIN = 1e-12


class EstimatorMode(str, enum.Enum):
    GPS_IMU = "GPS_IMU"
    IMU_ONLY = "IMU_ONLY"


@dataclass(frozen=True)
class EstimatorState:
    x_hat: np.ndarray
    P: np.ndarray
    mode: EstimatorMode = EstimatorMode.GPS_IMU

    def __post_init__(self):
        object.__setattr__(self, "x_hat", np.asarray(self.x_hat, dtype=float).ravel())
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        object.__setattr__(self, "mode", EstimatorMode(self.mode))

    def with_mode(self, mode) -> "EstimatorState":
        return replace(self, mode=EstimatorMode(mode))


@dataclass(frozen=True)
class StackedModel:
    """Output stack seen by the filter in one mode."""

    C: np.ndarray
    D: np.ndarray
    Sigma_y: np.ndarray
    gps_rows: int  # leading rows of C that belong to the GPS channel


def stacked(model: SystemModel, mode=EstimatorMode.GPS_IMU) -> StackedModel:
    mode = EstimatorMode(mode)
    m_G, m_I = model.m_G, model.m_I
    if mode is EstimatorMode.IMU_ONLY:
        return StackedModel(C=model.C_I, D=np.eye(m_I), Sigma_y=model.Sigma_I, gps_rows=0)
    C = np.vstack([model.C_G, model.C_I])
    D = np.zeros((m_G + m_I, m_G + m_I))
    D[m_G:, m_G:] = np.eye(m_I)
    Sigma_y = np.zeros_like(D)
    Sigma_y[:m_G, :m_G] = model.Sigma_G
    Sigma_y[m_G:, m_G:] = model.Sigma_I
    return StackedModel(C=C, D=D, Sigma_y=Sigma_y, gps_rows=m_G)


def _solve_right(M: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Return ``M @ inv(S)`` for a symmetric positive definite ``S``."""
    if 1.0 / np.linalg.cond(S) < RCOND_MIN:
        raise NumericalError(f"innovation covariance is singular (cond={np.linalg.cond(S):.3g})")
    return np.linalg.solve(S, M.T).T


def gain(P_prev, model: SystemModel, mode=EstimatorMode.GPS_IMU, stack: StackedModel | None = None) -> np.ndarray:
    """Trace-minimizing gain for the stacked outputs of ``mode``.

    Returns the ``n x (m_G + m_I)`` matrix ``[K_G, K_I]`` in GPS+IMU mode and
    the ``n x m_I`` block ``K_I`` in IMU-only mode.
    """
    st = stack or stacked(model, mode)
    P_prev = np.asarray(P_prev, dtype=float)
    A, Sw = model.A, model.Sigma_w
    F = st.C @ A - st.D @ st.C
    S = F @ P_prev @ F.T + st.C @ Sw @ st.C.T + st.Sigma_y
    return _solve_right(A @ P_prev @ F.T + Sw @ st.C.T, S)


def propagate_covariance(P_prev, K, model: SystemModel, mode=EstimatorMode.GPS_IMU, stack=None) -> np.ndarray:
    """Error covariance after one step with an arbitrary gain ``K`` (Joseph-like form)."""
    st = stack or stacked(model, mode)
    n = model.n
    F = st.C @ model.A - st.D @ st.C
    M = model.A - K @ F
    J = np.eye(n) - K @ st.C
    P = M @ P_prev @ M.T + J @ model.Sigma_w @ J.T + K @ st.Sigma_y @ K.T
    return 0.5 * (P + P.T)


def update(est: EstimatorState, u, y_G, y_I, model: SystemModel) -> EstimatorState:
    """One filter step from ``k-1`` to ``k``.

    In IMU-only mode ``y_G`` is ignored and may be ``None``.
    """
    u = np.asarray(u, dtype=float).ravel()
    y_I = np.asarray(y_I, dtype=float).ravel()
    if u.shape != (model.m_u,) or y_I.shape != (model.m_I,):
        raise ConfigurationError(f"dimension mismatch: u{u.shape} y_I{y_I.shape}")
    st = stacked(model, est.mode)
    K = gain(est.P, model, est.mode, st)

    x_pred = model.A @ est.x_hat + model.B @ u
    innov_I = y_I - model.C_I @ (x_pred - est.x_hat)
    if est.mode is EstimatorMode.GPS_IMU:
        y_G = np.asarray(y_G, dtype=float).ravel()
        if y_G.shape != (model.m_G,):
            raise ConfigurationError(f"dimension mismatch: y_G{y_G.shape}")
        innov = np.concatenate([y_G - model.C_G @ x_pred, innov_I])
    else:
        innov = innov_I
    x_hat = x_pred + K @ innov
    P = propagate_covariance(est.P, K, model, est.mode, st)
    return EstimatorState(x_hat=x_hat, P=P, mode=est.mode)


def predict_covariance_gps_denied(P0, horizon: int, model: SystemModel) -> np.ndarray:
    """Deterministic IMU-only covariance sequence.

    Returns an array of shape ``(horizon + 1, n, n)`` whose first entry is
    ``P0``; entry ``j`` is the covariance ``j`` steps after GPS is dropped.
    """
    st = stacked(model, EstimatorMode.IMU_ONLY)
    out = np.empty((horizon + 1, model.n, model.n))
    P = np.asarray(P0, dtype=float)
    out[0] = P
    for j in range(1, horizon + 1):
        K = gain(P, model, EstimatorMode.IMU_ONLY, st)
        P = propagate_covariance(P, K, model, EstimatorMode.IMU_ONLY, st)
        out[j] = P
    return out


def steady_state_covariance(model: SystemModel, P0=None, tol: float = 1e-12, max_iter: int = 20000) -> np.ndarray:
    """Fixed point of the GPS+IMU covariance recursion."""
    st = stacked(model, EstimatorMode.GPS_IMU)
    P = np.eye(model.n) if P0 is None else np.asarray(P0, dtype=float)
    for _ in range(max_iter):
        K = gain(P, model, EstimatorMode.GPS_IMU, st)
        P_next = propagate_covariance(P, K, model, EstimatorMode.GPS_IMU, st)
        if np.max(np.abs(P_next - P)) < tol:
            return P_next
        P = P_next
    raise NumericalError("GPS+IMU covariance recursion did not converge")
