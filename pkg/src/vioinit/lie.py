"""SO(3) calculus on numpy arrays.

Every function accepts a single vector/matrix or a batch with arbitrary leading
dimensions, i.e. vectors are ``(..., 3)`` and matrices ``(..., 3, 3)``.
"""
from __future__ import annotations

import numpy as np

from .errors import NotSkewSymmetric

EXP_SMALL_ANGLE = 1e-8
JAC_SMALL_ANGLE = 1e-5
# Above this angle the log map recovers the axis from the symmetric part.
LOG_NEAR_PI = np.pi - 1e-3
ORTHO_TOL = 1e-9

_EYE = np.eye(3)


def hat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def vee(m: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if np.any(np.abs(m + np.swapaxes(m, -1, -2)) > tol):
        raise NotSkewSymmetric("matrix is not skew-symmetric")
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _vee_unchecked(m):
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


def exp_so3(phi: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, with a Taylor expansion of the coefficients near zero."""
    phi = np.asarray(phi, dtype=float)
    theta = _norm(phi)
    small = theta < EXP_SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    th2 = theta * theta
    a = np.where(small, 1.0 - th2 / 6.0, np.sin(th) / th)
    b = np.where(small, 0.5 - th2 / 24.0, (1.0 - np.cos(th)) / (th * th))
    K = hat(phi)
    return _EYE + a[..., None, None] * K + b[..., None, None] * (K @ K)


def log_so3(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`exp_so3`; returns rotation vectors with norm <= pi.

    At (or very near) a half turn the axis comes from the largest diagonal
    entry of the symmetric part, with its sign fixed by the antisymmetric part
    or, exactly at pi, by making the first nonzero component positive.
    """
    r = np.asarray(r, dtype=float)
    w = 0.5 * _vee_unchecked(r - np.swapaxes(r, -1, -2))
    s = _norm(w)
    c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)

    small = theta < EXP_SMALL_ANGLE
    safe_s = np.where(s > 0, s, 1.0)
    scale = np.where(small, 1.0 + theta * theta / 6.0, theta / safe_s)
    out = scale[..., None] * w

    near_pi = theta > LOG_NEAR_PI
    if np.any(near_pi):
        out = np.array(out, copy=True)
        rb = r[near_pi]
        wb = w[near_pi]
        thb = theta[near_pi]
        cb = c[near_pi]
        sym = 0.5 * (rb + np.swapaxes(rb, -1, -2))
        aat = (sym - cb[:, None, None] * _EYE) / (1.0 - cb)[:, None, None]
        idx = np.argmax(np.diagonal(aat, axis1=-2, axis2=-1), axis=-1)
        axis = aat[np.arange(len(idx)), :, idx]
        axis /= _norm(axis)[:, None]
        proj = np.sum(axis * wb, axis=-1)
        for n in range(len(axis)):
            if abs(proj[n]) > 1e-12:
                sign = np.sign(proj[n])
            else:
                nz = axis[n][np.abs(axis[n]) > 1e-12]
                sign = np.sign(nz[0]) if nz.size else 1.0
            axis[n] *= sign
        out[near_pi] = thb[:, None] * axis
    return out


def _jac_coeffs(phi):
    theta = _norm(phi)
    small = theta < JAC_SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    th2 = theta * theta
    a = np.where(small, 0.5 - th2 / 24.0, (1.0 - np.cos(th)) / (th * th))
    b = np.where(small, 1.0 / 6.0 - th2 / 120.0, (th - np.sin(th)) / (th ** 3))
    # coefficient of hat^2 in the inverse jacobians
    c = np.where(
        small,
        1.0 / 12.0 + th2 / 720.0,
        1.0 / (th * th) - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th)),
    )
    return a[..., None, None], b[..., None, None], c[..., None, None]


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    a, b, _ = _jac_coeffs(phi)
    K = hat(phi)
    return _EYE - a * K + b * (K @ K)


def left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    a, b, _ = _jac_coeffs(phi)
    K = hat(phi)
    return _EYE + a * K + b * (K @ K)


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    _, _, c = _jac_coeffs(phi)
    K = hat(phi)
    return _EYE + 0.5 * K + c * (K @ K)


def left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    _, _, c = _jac_coeffs(phi)
    K = hat(phi)
    return _EYE - 0.5 * K + c * (K @ K)


def orthonormality_defect(r: np.ndarray) -> float:
    r = np.asarray(r, dtype=float)
    d = np.swapaxes(r, -1, -2) @ r - _EYE
    return float(np.max(np.sqrt(np.sum(d * d, axis=(-2, -1)))))


def is_rotation(r: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return orthonormality_defect(r) <= tol and bool(np.all(np.abs(np.linalg.det(r) - 1.0) <= tol))


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Closest rotation in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=float))
    out = u @ vt
    flip = np.linalg.det(out) < 0
    if np.any(flip):
        u = np.array(u, copy=True)
        u[..., :, 2] = np.where(flip[..., None], -u[..., :, 2], u[..., :, 2])
        out = u @ vt
    return out


def renormalize(r: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    """Re-orthonormalize only when the defect exceeds ``tol``."""
    if orthonormality_defect(r) > tol:
        return orthonormalize(r)
    return r


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def from_ypr(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """R = Rz(yaw) Ry(pitch) Rx(roll), angles in radians."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def to_ypr(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    pitch = -np.arcsin(np.clip(r[..., 2, 0], -1.0, 1.0))
    yaw = np.arctan2(r[..., 1, 0], r[..., 0, 0])
    roll = np.arctan2(r[..., 2, 1], r[..., 2, 2])
    return np.stack([yaw, pitch, roll], axis=-1)


def angle_between(r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Geodesic distance in radians."""
    return _norm(log_so3(np.swapaxes(r1, -1, -2) @ r2))
