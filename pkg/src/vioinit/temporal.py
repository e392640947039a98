"""Time offset bookkeeping and constant-twist motion interpolation.

Offset convention: the IMU sample stamped ``t`` and the camera frame stamped
``t + td`` observe the same physical instant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lie
from .errors import DegenerateInterval, OffsetOutOfRange

MAX_OFFSET = 0.5
MIN_INTERVAL = 1e-6


def check_offset(td: float, max_abs: float = MAX_OFFSET) -> float:
    td = float(td)
    if not np.isfinite(td) or abs(td) > max_abs:
        raise OffsetOutOfRange(f"|td| = {abs(td):.4f} s exceeds {max_abs} s")
    return td


@dataclass(frozen=True)
class CameraPoseUpToScale:
    rotation: np.ndarray
    position: np.ndarray
    timestamp: float


@dataclass(frozen=True)
class CameraTwist:
    omega: np.ndarray
    v_tilde: np.ndarray


@dataclass(frozen=True)
class ImuState:
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    timestamp: float = 0.0


@dataclass(frozen=True)
class Extrinsics:
    """Camera pose in the body frame (R^b_c, p^b_c)."""

    r_bc: np.ndarray
    p_bc: np.ndarray

    @property
    def r_cb(self) -> np.ndarray:
        return self.r_bc.T

    @property
    def p_cb(self) -> np.ndarray:
        return -self.r_bc.T @ self.p_bc

    @classmethod
    def from_cb(cls, r_cb, p_cb) -> "Extrinsics":
        r_cb = np.asarray(r_cb, float)
        return cls(r_cb.T, -r_cb.T @ np.asarray(p_cb, float))

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))


def camera_twist(a: CameraPoseUpToScale, b: CameraPoseUpToScale) -> CameraTwist:
    dt = b.timestamp - a.timestamp
    if dt < MIN_INTERVAL:
        raise DegenerateInterval(f"interval {dt:g} s is too short")
    omega = lie.log_so3(a.rotation.T @ b.rotation) / dt
    v = (np.asarray(b.position) - a.position) / dt
    return CameraTwist(omega, v)


def twists_from_poses(R: np.ndarray, p: np.ndarray, t: np.ndarray):
    """Forward-difference twists for a pose sequence; the last pose reuses its predecessor's."""
    dt = np.diff(t)
    if np.any(dt < MIN_INTERVAL):
        raise DegenerateInterval("keyframe interval too short")
    omega = lie.log_so3(np.swapaxes(R[:-1], -1, -2) @ R[1:]) / dt[:, None]
    v = (p[1:] - p[:-1]) / dt[:, None]
    return np.vstack([omega, omega[-1:]]), np.vstack([v, v[-1:]])


def interpolate_camera(a: CameraPoseUpToScale, tw: CameraTwist, td: float,
                       max_offset: float = MAX_OFFSET) -> CameraPoseUpToScale:
    check_offset(td, max_offset)
    R = a.rotation @ lie.exp_so3(tw.omega * td)
    p = a.position + tw.v_tilde * td
    return CameraPoseUpToScale(R, p, a.timestamp + td)


def interpolate_imu(s: ImuState, omega_body, td: float, max_offset: float = MAX_OFFSET) -> ImuState:
    """Body state at ``t - td`` under constant angular and linear velocity."""
    check_offset(td, max_offset)
    R = s.rotation @ lie.exp_so3(-np.asarray(omega_body) * td)
    p = s.position - s.velocity * td
    return ImuState(R, p, s.velocity, s.timestamp - td)


def imu_from_camera(c: CameraPoseUpToScale, tw: CameraTwist, td: float, s: float,
                    ex: Extrinsics):
    """Body rotation and metric position at the IMU stamp numerically equal to ``c.timestamp``."""
    if s <= 0:
        raise ValueError("scale must be positive")
    Rc = c.rotation @ lie.exp_so3(tw.omega * td)
    R = Rc @ ex.r_cb
    p = Rc @ ex.p_cb + s * (c.position + tw.v_tilde * td)
    return R, p


def camera_from_imu(st: ImuState, omega_body, td: float, ex: Extrinsics):
    """Camera rotation and metric position at the camera stamp numerically equal to ``st.timestamp``."""
    Rb = st.rotation @ lie.exp_so3(-np.asarray(omega_body) * td)
    R = Rb @ ex.r_bc
    p = Rb @ ex.p_bc + st.position - st.velocity * td
    return R, p
