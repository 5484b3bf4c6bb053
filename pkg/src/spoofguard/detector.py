"""Chi-square CUSUM detector on the GPS prediction residual."""

from __future__ import annotations

import enum
from functools import lru_cache
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, NumericalError
from .model import SystemModel
from .stats import chi2_quantile


class ControlMode(str, enum.Enum):
    ROBUST = "ROBUST"
    EMERGENCY = "EMERGENCY"


@dataclass(frozen=True)
class DetectorState:
    """CUSUM statistic plus the decision it currently implies.

    ``k`` is the index of the last processed step; ``k_attack`` is the step
    of the latest ROBUST -> EMERGENCY switch.
    """

    S: float = 0.0
    delta: float = 0.15
    alpha: float = 0.01
    df: int = 2
    mode: ControlMode = ControlMode.ROBUST
    k: int = 0
    k_attack: int | None = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"forgetting factor must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"significance must lie in (0, 1), got {self.alpha}")
        if self.S < 0:
            raise ConfigurationError("CUSUM statistic cannot be negative")
        object.__setattr__(self, "mode", ControlMode(self.mode))

    @property
    def threshold(self) -> float:
        return threshold(self.df, self.alpha, self.delta)


@lru_cache(maxsize=64)
def threshold(df: int, alpha: float, delta: float) -> float:
    """Alarm level ``chi2_df(alpha) / (1 - delta)``, the sum of the discounted per-step levels."""
    return chi2_quantile(df, alpha) / (1.0 - delta)


def estimate_attack(y_G, x_hat_prev, u_prev, model: SystemModel) -> np.ndarray:
    """GPS residual against the one-step prediction from the previous estimate.

    The current estimate must not be used here: it already depends on
    ``y_G`` and would bias the residual toward zero.
    """
    x_pred = model.A @ np.asarray(x_hat_prev, dtype=float) + model.B @ np.asarray(u_prev, dtype=float)
    return np.asarray(y_G, dtype=float) - model.C_G @ x_pred


def innovation_covariance(P_prev, model: SystemModel) -> np.ndarray:
    C = model.C_G
    P_d = C @ (model.A @ np.asarray(P_prev, dtype=float) @ model.A.T + model.Sigma_w) @ C.T + model.Sigma_G
    return 0.5 * (P_d + P_d.T)


def normalized_statistic(d_hat, P_d) -> float:
    d_hat = np.asarray(d_hat, dtype=float)
    try:
        L = np.linalg.cholesky(P_d)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("attack residual covariance is not positive definite") from exc
    z = np.linalg.solve(L, d_hat)
    return float(z @ z)


def cusum_step(det: DetectorState, d_hat, P_d) -> DetectorState:
    """Discounted cumulative sum ``S_k = delta * S_{k-1} + d^T P_d^{-1} d``.

    The returned state still carries the previous mode; call :func:`decide`.
    """
    stat = normalized_statistic(d_hat, P_d)
    return replace(det, S=det.delta * det.S + stat, k=det.k + 1)


def decide(det: DetectorState) -> DetectorState:
    """Apply the threshold test; ``S`` equal to the threshold stays ROBUST."""
    if det.S > det.threshold:
        if det.mode is ControlMode.ROBUST:
            return replace(det, mode=ControlMode.EMERGENCY, k_attack=det.k)
        return det
    if det.mode is ControlMode.EMERGENCY:
        return replace(det, mode=ControlMode.ROBUST)
    return det
