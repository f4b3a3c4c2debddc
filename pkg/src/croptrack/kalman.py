"""Discrete linear Kalman filter with a 2-D constant-velocity motion model.

State vector is ``(x, y, dx, dy)`` in pixels and pixels/frame; the
measurement is the object center ``(x, y)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DEFAULT_Q = 0.01
DEFAULT_R = 1.0
DEFAULT_P0 = (1.0, 1.0, 100.0, 100.0)

DET_EPS = 1e-12


class SingularInnovationError(ArithmeticError):
    pass


def _symmetrize(m):
    return 0.5 * (m + m.T)


def _readonly(a, shape):
    a = np.array(a, dtype=np.float64).reshape(shape)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class KalmanModel:
    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", _readonly(self.F, (4, 4)))
        object.__setattr__(self, "H", _readonly(self.H, (2, 4)))
        object.__setattr__(self, "Q", _readonly(self.Q, (4, 4)))
        object.__setattr__(self, "R", _readonly(self.R, (2, 2)))
        for name in ("Q", "R"):
            m = getattr(self, name)
            if not np.allclose(m, m.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise ValueError("Q must be positive semi-definite")
        if np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise ValueError("R must be positive definite")


@dataclass(frozen=True)
class KalmanState:
    """Estimate ``x`` with covariance ``P``.

    After :func:`correct`, ``innovation`` and ``gain`` hold the values used
    for that update so they can be logged.
    """

    x: np.ndarray
    P: np.ndarray
    innovation: Optional[np.ndarray] = None
    gain: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "x", _readonly(self.x, (4,)))
        object.__setattr__(self, "P", _readonly(self.P, (4, 4)))

    @property
    def position(self) -> tuple[float, float]:
        return (float(self.x[0]), float(self.x[1]))

    @property
    def velocity(self) -> tuple[float, float]:
        return (float(self.x[2]), float(self.x[3]))


def constant_velocity_model(q: float = DEFAULT_Q, r: float = DEFAULT_R) -> KalmanModel:
    if q < 0:
        raise ValueError(f"process noise q must be >= 0, got {q}")
    if r <= 0:
        raise ValueError(f"measurement noise r must be > 0, got {r}")
    F = np.array([[1, 0, 1, 0],
                  [0, 1, 0, 1],
                  [0, 0, 1, 0],
                  [0, 0, 0, 1]], dtype=np.float64)
    H = np.array([[1, 0, 0, 0],
                  [0, 1, 0, 0]], dtype=np.float64)
    return KalmanModel(F=F, H=H, Q=q * np.eye(4), R=r * np.eye(2))


def initial_state(center: Sequence[float], p0: Sequence[float] = DEFAULT_P0) -> KalmanState:
    """State at ``center`` with zero velocity and diagonal covariance ``p0``."""
    cx, cy = center
    return KalmanState(x=np.array([cx, cy, 0.0, 0.0]), P=np.diag(np.asarray(p0, dtype=np.float64)))


def predict(s: KalmanState, m: KalmanModel) -> KalmanState:
    x = m.F @ s.x
    P = _symmetrize(m.F @ s.P @ m.F.T + m.Q)
    return KalmanState(x=x, P=P)


def expected_measurement(s: KalmanState, m: KalmanModel) -> np.ndarray:
    return m.H @ s.x


def _inverse_2x2(S):
    a, b = S[0]
    c, d = S[1]
    det = a * d - b * c
    # relative to the magnitude of the products, so tiny but well-conditioned S passes
    if not abs(det) > DET_EPS * (abs(a * d) + abs(b * c)):
        raise SingularInnovationError(
            f"innovation covariance S = H P H^T + R is singular (det={det:.3g})")
    return np.array([[d, -b], [-c, a]]) / det


def correct(s: KalmanState, m: KalmanModel, z: Sequence[float]) -> KalmanState:
    z = np.asarray(z, dtype=np.float64)
    v = z - expected_measurement(s, m)
    PHt = s.P @ m.H.T
    S = m.H @ PHt + m.R
    K = PHt @ _inverse_2x2(S)
    x = s.x + K @ v
    P = _symmetrize((np.eye(4) - K @ m.H) @ s.P)
    return KalmanState(x=x, P=P, innovation=v, gain=K)
