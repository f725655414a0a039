"""Rigid-body roll-axis model: inertia, gravity load and its linear-in-parameters form.

The model maps a reference (angle, velocity, acceleration) to the input that
realizes it::

    u = M * acc + H(angle) + d * vel
    M = m * (y**2 + z**2) + jxx
    H = m * g * (y * cos(angle) - z * sin(angle)) * cos(tilt)

Given the centre-of-mass offsets ``(y, z)`` the output is linear in
``(m, jxx, d)``; :func:`basis_matrix` returns that regressor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import Trajectory

G_DEFAULT = 9.81


@dataclass(frozen=True)
class PhysicalParams:
    m: float
    jxx: float
    d: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("m", "jxx", "d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    @classmethod
    def from_vector(cls, v) -> "PhysicalParams":
        v = [float(x) for x in v]
        return cls(*v)

    def to_vector(self) -> np.ndarray:
        return np.array([self.m, self.jxx, self.d, self.y, self.z])

    def split(self) -> "LinearNonlinearSplit":
        return LinearNonlinearSplit(np.array([self.m, self.jxx, self.d]),
                                    np.array([self.y, self.z]))

    def as_dict(self) -> dict:
        return {"m": self.m, "jxx": self.jxx, "d": self.d, "y": self.y, "z": self.z}


@dataclass(frozen=True)
class PhysicalConstants:
    g: float = G_DEFAULT
    tilt: float = 0.0

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError(f"g must be positive, got {self.g}")


@dataclass(frozen=True)
class LinearNonlinearSplit:
    zeta_l: np.ndarray  # [m, jxx, d]
    zeta_n: np.ndarray  # [y, z]

    def join(self) -> PhysicalParams:
        return PhysicalParams.from_vector(np.concatenate([self.zeta_l, self.zeta_n]))


def inertia(p: PhysicalParams) -> float:
    return p.m * (p.y ** 2 + p.z ** 2) + p.jxx


def gravity_term(theta, p: PhysicalParams, c: PhysicalConstants = PhysicalConstants()):
    return p.m * c.g * (p.y * np.cos(theta) - p.z * np.sin(theta)) * np.cos(c.tilt)


def feedforward(theta, theta_dot, theta_ddot, p: PhysicalParams,
                c: PhysicalConstants = PhysicalConstants()):
    """Model input for arbitrary (angle, velocity, acceleration) samples."""
    return inertia(p) * np.asarray(theta_ddot) + gravity_term(theta, p, c) + p.d * np.asarray(theta_dot)


def f_M(traj: Trajectory, p: PhysicalParams, c: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    return np.asarray(feedforward(traj.theta_d, traj.theta_d_dot, traj.theta_d_ddot, p, c),
                      dtype=np.float64)


def basis_row(theta_d, theta_d_dot, theta_d_ddot, zeta_n, c: PhysicalConstants = PhysicalConstants()):
    y, z = float(zeta_n[0]), float(zeta_n[1])
    x1 = (y * y + z * z) * theta_d_ddot + c.g * (y * np.cos(theta_d) - z * np.sin(theta_d)) * np.cos(c.tilt)
    return np.array([x1, theta_d_ddot, theta_d_dot], dtype=np.float64)


def basis_matrix(traj: Trajectory, zeta_n, c: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """N x 3 regressor ``X`` with ``X @ [m, jxx, d] == f_M``."""
    return basis_row(traj.theta_d, traj.theta_d_dot, traj.theta_d_ddot, zeta_n, c).T.copy()


def f_M_jacobian(traj: Trajectory, p: PhysicalParams, c: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """Analytic N x 5 derivative of f_M with respect to [m, jxx, d, y, z]."""
    th, v, a = traj.theta_d, traj.theta_d_dot, traj.theta_d_ddot
    ct = np.cos(c.tilt)
    cos_th, sin_th = np.cos(th), np.sin(th)
    jac = np.empty((traj.n, 5))
    jac[:, 0] = (p.y ** 2 + p.z ** 2) * a + c.g * (p.y * cos_th - p.z * sin_th) * ct
    jac[:, 1] = a
    jac[:, 2] = v
    jac[:, 3] = 2.0 * p.m * p.y * a + p.m * c.g * cos_th * ct
    jac[:, 4] = 2.0 * p.m * p.z * a - p.m * c.g * sin_th * ct
    return jac
