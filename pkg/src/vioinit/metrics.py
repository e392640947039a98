"""Error metrics: Euler-angle rotation error, trajectory alignment and RMSE."""
from __future__ import annotations

import numpy as np

from . import lie
from .errors import DegenerateTrajectory


def rotation_error_deg(R_est, R_true) -> float:
    """Magnitude of the yaw-pitch-roll difference vector, in degrees."""
    d = np.asarray(lie.to_ypr(R_est)) - np.asarray(lie.to_ypr(R_true))
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return float(np.degrees(np.linalg.norm(d)))


def umeyama(src, dst, with_scale: bool = True):
    """Similarity ``(s, R, t)`` minimizing ``sum |dst - (s R src + t)|^2``."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("expected two (N, 3) arrays of equal shape")
    if len(src) < 3:
        raise DegenerateTrajectory("need at least 3 positions")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = np.mean(np.sum(xs ** 2, axis=1))
    C = xd.T @ xs / len(src)
    U, d, Vt = np.linalg.svd(C)
    sv = np.linalg.svd(xs, compute_uv=False)
    if var_s <= 0 or sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateTrajectory("positions are collinear")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(d) @ S) / var_s) if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def align_and_rmse(est, truth, with_scale: bool = True) -> float:
    """Position RMSE after the best similarity (or rigid) alignment of ``est`` onto ``truth``."""
    s, R, t = umeyama(est, truth, with_scale)
    aligned = s * np.asarray(est, float) @ R.T + t
    return float(np.sqrt(np.mean(np.sum((aligned - truth) ** 2, axis=1))))


def velocity_rmse(est, truth, rotate: bool = True) -> float:
    """Velocity RMSE, optionally after the best rotation of the estimates onto the truth."""
    est = np.asarray(est, float)
    truth = np.asarray(truth, float)
    if rotate:
        U, _, Vt = np.linalg.svd(truth.T @ est)
        S = np.eye(3)
        if np.linalg.det(U) * np.linalg.det(Vt) < 0:
            S[2, 2] = -1.0
        est = est @ (U @ S @ Vt).T
    return float(np.sqrt(np.mean(np.sum((est - truth) ** 2, axis=1))))
