"""Attacker location tracker: UKF over ``[attacker position; power]``.

A single signal-strength reading constrains the attacker only to a circle,
so the filter stacks the last ``M`` readings together with the UAV positions
they were taken at. The attacker follows a random walk (transition matrix
``I``), so propagating a sigma point back ``j`` steps leaves it unchanged and
only the UAV position differs between window entries.

The symmetric set of ``2n`` sigma points ``z +/- row_i(R)`` with
``R^T R = n P`` is used with equal weights ``1/(2n)`` and no center point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, NumericalError, SingularityError
from .model import EPS_DIST, SystemModel

ETA_MIN = 1e-3
_JITTER_MAX = 1e-9


@dataclass(frozen=True)
class AttackerEstimate:
    """Tracker state.

    ``window`` holds ``(y_S, uav_position)`` pairs, newest first, at most
    ``M`` of them.
    """

    z_hat: np.ndarray
    P_a: np.ndarray
    Sigma_wa: np.ndarray
    M: int = 5
    window: tuple = field(default_factory=tuple)
    n_updates: int = 0

    def __post_init__(self):
        object.__setattr__(self, "z_hat", np.asarray(self.z_hat, dtype=float).ravel())
        object.__setattr__(self, "P_a", np.asarray(self.P_a, dtype=float))
        object.__setattr__(self, "Sigma_wa", np.asarray(self.Sigma_wa, dtype=float))
        n = self.z_hat.shape[0]
        if self.P_a.shape != (n, n) or self.Sigma_wa.shape != (n, n):
            raise ConfigurationError(f"tracker covariances must be {n}x{n}")
        if self.M < 1:
            raise ConfigurationError("window size M must be at least 1")

    @property
    def position(self) -> np.ndarray:
        return self.z_hat[:-1]

    @property
    def power(self) -> float:
        return float(self.z_hat[-1])

    @property
    def window_full(self) -> bool:
        return len(self.window) >= self.M

    def outputs(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(y) for y, _ in self.window])

    def uav_positions(self) -> np.ndarray:
        return np.array([p for _, p in self.window])


def initial_estimate(
    uav_position,
    eta0: float = 100.0,
    offset=(10.0, 10.0),
    P0=None,
    Sigma_wa=None,
    M: int = 5,
) -> AttackerEstimate:
    """Wide deterministic prior placed at a fixed offset from the UAV."""
    pos = np.asarray(uav_position, dtype=float).ravel() + np.asarray(offset, dtype=float)
    n = pos.shape[0] + 1
    P0 = np.diag([50.0**2] * (n - 1) + [100.0**2]) if P0 is None else np.asarray(P0, dtype=float)
    Sigma_wa = np.diag([1e-2] * (n - 1) + [1e-2]) if Sigma_wa is None else np.asarray(Sigma_wa, dtype=float)
    return AttackerEstimate(z_hat=np.append(pos, eta0), P_a=P0, Sigma_wa=Sigma_wa, M=M)


def push(est: AttackerEstimate, y_S, uav_position) -> AttackerEstimate:
    entry = (np.atleast_1d(np.asarray(y_S, dtype=float)).copy(), np.asarray(uav_position, dtype=float).ravel().copy())
    return replace(est, window=((entry,) + est.window)[: est.M])


def predict(est: AttackerEstimate) -> AttackerEstimate:
    """Random-walk prediction: mean kept, covariance grows by ``Sigma_wa``."""
    return replace(est, P_a=est.P_a + est.Sigma_wa)


def _sqrt_rows(P: np.ndarray) -> np.ndarray:
    # upper factor R with R^T R = P; rows of R are the sigma offsets
    scale = max(float(np.max(np.abs(np.diag(P)))), 1.0)
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(P + jitter * scale * np.eye(P.shape[0]))
            return L.T
        except np.linalg.LinAlgError:
            jitter = 1e-15 if jitter == 0.0 else jitter * 10.0
            if jitter > _JITTER_MAX:
                raise NumericalError("tracker covariance is not positive semidefinite") from None


def sigma_points(z_hat, P_a) -> np.ndarray:
    """The ``2n`` points ``z +/- row_i(sqrt(n P))``, shape ``(2n, n)``."""
    z_hat = np.asarray(z_hat, dtype=float).ravel()
    n = z_hat.shape[0]
    R = _sqrt_rows(n * np.asarray(P_a, dtype=float))
    return np.vstack([z_hat + R, z_hat - R])


def window_outputs(point, uav_positions, model: SystemModel) -> np.ndarray:
    """Predicted strength readings of one sigma point over the window.

    Entry ``j`` pairs the point with the UAV position stored ``j`` steps ago.
    """
    point = np.asarray(point, dtype=float).ravel()
    uav = np.atleast_2d(np.asarray(uav_positions, dtype=float))
    d2 = np.sum((uav - point[:-1]) ** 2, axis=1)
    if np.any(d2 < EPS_DIST**2):
        raise SingularityError("sigma point coincides with a stored UAV position")
    return np.outer(point[-1] / d2, model.C_S).ravel()


def ukf_update(est: AttackerEstimate, y_window, uav_positions, model: SystemModel) -> AttackerEstimate:
    """Measurement update with the stacked window of readings."""
    y_window = np.asarray(y_window, dtype=float).ravel()
    uav = np.atleast_2d(np.asarray(uav_positions, dtype=float))
    n = est.z_hat.shape[0]
    X = sigma_points(est.z_hat, est.P_a)
    Y = np.array([window_outputs(pt, uav, model) for pt in X])
    w = 1.0 / (2 * n)
    y_bar = w * Y.sum(axis=0)
    dY = Y - y_bar
    dX = X - est.z_hat
    P_y = w * dY.T @ dY + np.kron(np.eye(uav.shape[0]), model.Sigma_S)
    P_xy = w * dX.T @ dY
    try:
        K = np.linalg.solve(P_y, P_xy.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular output covariance in tracker update") from exc
    z = est.z_hat + K @ (y_window - y_bar)
    z[-1] = max(z[-1], ETA_MIN)
    P = est.P_a - K @ P_y @ K.T
    P = 0.5 * (P + P.T)
    return replace(est, z_hat=z, P_a=P, n_updates=est.n_updates + 1)


def step(est: AttackerEstimate, y_S, uav_position, model: SystemModel) -> AttackerEstimate:
    """Record a reading, predict, and update once the window is full."""
    est = predict(push(est, y_S, uav_position))
    if not est.window_full:
        return est
    return ukf_update(est, est.outputs(), est.uav_positions(), model)
