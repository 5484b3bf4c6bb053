"""Plant, sensor channels and spoofing-device model.

Everything here is pure: noise samples are drawn by the caller and passed in,
so a run can be replayed exactly from its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, SingularityError

#: Guard radius (m) below which the 1/r^2 signal-strength model is refused.
EPS_DIST = 1e-6


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} has non-finite entries")
    return arr


def _check_cov(mat: np.ndarray, name: str, definite: bool) -> None:
    if mat.shape[0] != mat.shape[1]:
        raise ConfigurationError(f"{name} must be square, got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=1e-9):
        raise ConfigurationError(f"{name} must be symmetric")
    if mat.size == 0:
        return  # channel absent
    lam_min = np.linalg.eigvalsh(mat).min()
    if definite and lam_min <= 0.0:
        raise ConfigurationError(f"{name} must be positive definite (min eig {lam_min:g})")
    if not definite and lam_min < -1e-12:
        raise ConfigurationError(f"{name} must be positive semidefinite (min eig {lam_min:g})")


@dataclass(frozen=True)
class SystemModel:
    """Linear plant with GPS, relative (IMU) and signal-strength outputs.

    ``C_S`` lumps the receive gain and wavelength factor of the Friis law, so
    the received spoofing power is ``C_S * eta / r**2``.
    """

    A: np.ndarray
    B: np.ndarray
    C_G: np.ndarray
    C_I: np.ndarray
    C_S: np.ndarray
    Sigma_w: np.ndarray
    Sigma_G: np.ndarray
    Sigma_I: np.ndarray
    Sigma_S: np.ndarray
    eta_S: float
    pos_index: tuple[int, ...] = (0, 1)
    dt: float = 0.1

    def __post_init__(self):
        for name in ("A", "B", "C_G", "C_I", "Sigma_w", "Sigma_G", "Sigma_I", "Sigma_S"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        object.__setattr__(self, "C_S", np.atleast_1d(np.asarray(self.C_S, dtype=float)).ravel())
        object.__setattr__(self, "pos_index", tuple(int(i) for i in self.pos_index))

        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ConfigurationError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C_G.shape[1] != n or self.C_I.shape[1] != n:
            raise ConfigurationError("C_G and C_I must have one column per state")
        if self.Sigma_w.shape != (n, n):
            raise ConfigurationError(f"Sigma_w must be {n}x{n}")
        if self.Sigma_G.shape != (self.m_G, self.m_G):
            raise ConfigurationError(f"Sigma_G must be {self.m_G}x{self.m_G}")
        if self.Sigma_I.shape != (self.m_I, self.m_I):
            raise ConfigurationError(f"Sigma_I must be {self.m_I}x{self.m_I}")
        if self.Sigma_S.shape != (self.m_S, self.m_S):
            raise ConfigurationError(f"Sigma_S must be {self.m_S}x{self.m_S}")
        _check_cov(self.Sigma_w, "Sigma_w", definite=False)
        for name in ("Sigma_G", "Sigma_I", "Sigma_S"):
            _check_cov(getattr(self, name), name, definite=True)
        if not self.eta_S > 0:
            raise ConfigurationError("eta_S must be positive")
        if np.any(self.C_S <= 0):
            raise ConfigurationError("C_S entries must be positive")
        if not self.pos_index or max(self.pos_index) >= n or min(self.pos_index) < 0:
            raise ConfigurationError(f"pos_index {self.pos_index} out of range for n={n}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m_u(self) -> int:
        return self.B.shape[1]

    @property
    def m_G(self) -> int:
        return self.C_G.shape[0]

    @property
    def m_I(self) -> int:
        return self.C_I.shape[0]

    @property
    def m_S(self) -> int:
        return self.C_S.shape[0]

    @property
    def vel_index(self) -> tuple[int, ...]:
        """State components that are not positions."""
        return tuple(i for i in range(self.n) if i not in self.pos_index)

    def position(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[list(self.pos_index)]

    def replace(self, **changes) -> "SystemModel":
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return SystemModel(**fields)


def double_integrator(dt: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Planar double integrator, state ``[px, py, vx, vy]``, input accelerations."""
    A = np.eye(4)
    A[0, 2] = A[1, 3] = dt
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = dt
    return A, B


def reference_model(eta_S: float = 200.0 / 30.0**2) -> SystemModel:
    """The 2-D double-integrator UAV sampled at 0.1 s with the reference noise levels."""
    A, B = double_integrator(0.1)
    C_G = np.hstack([np.eye(2), np.zeros((2, 2))])
    C_I = np.hstack([np.zeros((2, 2)), np.eye(2)])
    return SystemModel(
        A=A,
        B=B,
        C_G=C_G,
        C_I=C_I,
        C_S=np.array([1.0]),
        Sigma_w=0.1 * np.eye(4),
        Sigma_G=np.eye(2),
        Sigma_I=0.01 * np.eye(2),
        Sigma_S=np.eye(1),
        eta_S=eta_S,
        pos_index=(0, 1),
        dt=0.1,
    )


@dataclass(frozen=True)
class TrueState:
    x: np.ndarray
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if not np.all(np.isfinite(self.x)):
            raise DomainError(f"non-finite state at k={self.k}")


@dataclass(frozen=True)
class Attacker:
    """Spoofing device.

    ``x_a`` holds the device location over the position components (a full
    state-sized vector is accepted and reduced). ``d`` is the signal injected
    into the GPS channel while the UAV is inside ``r_effect``.
    """

    x_a: np.ndarray
    eta: float
    d: np.ndarray
    r_effect: float

    def __post_init__(self):
        object.__setattr__(self, "x_a", np.asarray(self.x_a, dtype=float).ravel())
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float).ravel())
        if not self.eta > 0:
            raise ConfigurationError("attacker power eta must be positive")
        if not self.r_effect > 0:
            raise ConfigurationError("r_effect must be positive")


@dataclass(frozen=True)
class SensorBundle:
    y_G: np.ndarray
    y_I: np.ndarray
    y_S: np.ndarray = field(default_factory=lambda: np.zeros(1))


def distance(model: SystemModel, x, x_a) -> float:
    """Euclidean distance over position components.

    Either argument may be a full state or already a position vector.
    """
    p = _pos(model, x)
    q = _pos(model, x_a)
    return float(np.linalg.norm(p - q))


def _pos(model: SystemModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] == model.n and model.n != len(model.pos_index):
        return v[list(model.pos_index)]
    if v.shape[0] != len(model.pos_index):
        raise ConfigurationError(
            f"expected a state ({model.n}) or position ({len(model.pos_index)}) vector, got {v.shape[0]}"
        )
    return v


def step_dynamics(model: SystemModel, x: TrueState, u, w) -> TrueState:
    """Advance the plant one step: ``A x + B u + w``."""
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if x.x.shape != (model.n,) or u.shape != (model.m_u,) or w.shape != (model.n,):
        raise ConfigurationError(
            f"dimension mismatch: x{x.x.shape} u{u.shape} w{w.shape} for n={model.n}, m_u={model.m_u}"
        )
    return TrueState(model.A @ x.x + model.B @ u + w, x.k + 1)


def signal_strength(model: SystemModel, eta, dist) -> np.ndarray:
    """Mean received spoofing power ``C_S * eta / dist**2``."""
    if dist < EPS_DIST:
        raise SingularityError(f"distance {dist:g} m below guard radius {EPS_DIST:g} m")
    return model.C_S * eta / dist**2


def in_range(model: SystemModel, x, attacker: Attacker) -> bool:
    # closed boundary: dist == r_effect counts as inside
    return distance(model, x, attacker.x_a) <= attacker.r_effect


def measure(
    model: SystemModel,
    x: TrueState,
    x_prev: TrueState,
    attacker: Attacker,
    inside: bool,
    noise,
) -> SensorBundle:
    """Sample the three outputs for the current state.

    ``noise`` is the triple ``(v_G, v_I, v_S)``. The GPS channel carries the
    injected signal and the strength channel the spoofer's power only when
    ``inside`` is true; otherwise the strength reads the genuine ``eta_S``.
    """
    v_G, v_I, v_S = (np.asarray(v, dtype=float).ravel() for v in noise)
    y_G = model.C_G @ x.x + v_G
    if inside:
        y_G = y_G + attacker.d
        y_S = signal_strength(model, attacker.eta, distance(model, x.x, attacker.x_a)) + v_S
    else:
        y_S = np.full(model.m_S, model.eta_S) + v_S
    y_I = model.C_I @ (x.x - x_prev.x) + v_I
    return SensorBundle(y_G=y_G, y_I=y_I, y_S=y_S)


def effective_range(eta: float, C_S, eta_S: float) -> float:
    """Largest radius at which spoofed power still beats the genuine signal.

    Solves ``C_S * eta / r**2 = eta_S`` for ``r``; only the first entry of a
    vector ``C_S`` is used.
    """
    c = float(np.atleast_1d(C_S)[0])
    if not (eta > 0 and c > 0 and eta_S > 0):
        raise DomainError(f"effective_range needs positive inputs, got eta={eta}, C_S={c}, eta_S={eta_S}")
    return float(np.sqrt(c * eta / eta_S))


def genuine_strength_for_range(eta: float, C_S, r_effect: float) -> float:
    """Inverse of :func:`effective_range`: the ``eta_S`` giving a target radius."""
    c = float(np.atleast_1d(C_S)[0])
    if not (eta > 0 and c > 0 and r_effect > 0):
        raise DomainError("genuine_strength_for_range needs positive inputs")
    return c * eta / r_effect**2
