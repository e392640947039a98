"""Finite-difference checks of the analytical Jacobians at random linearization points."""
from __future__ import annotations

import numpy as np

from . import estimator as est
from . import lie
from .imu import ImuNoiseSpec, ImuStream, preintegrate_windows
from .initializer import build_keyframes, rotation_residuals
from .simulator import CameraIntrinsics
from .temporal import CameraPoseUpToScale

STEP = 1e-6


def _rel(num, ana) -> float:
    scale = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-9)
    return float(np.linalg.norm(num - ana) / scale)


def random_stream(rng, duration: float = 0.6, rate: float = 200.0) -> ImuStream:
    t = np.arange(0.0, duration + 0.5 / rate, 1.0 / rate)
    gyro = rng.normal(0.0, 0.6, (len(t), 3))
    accel = rng.normal(0.0, 2.0, (len(t), 3)) + [0.0, 0.0, 9.81]
    return ImuStream(t, gyro, accel)


def random_state(rng, n_kf: int = 4, n_lm: int = 10) -> est.FullState:
    """Window with random poses looking at landmarks roughly 5 m ahead of every camera."""
    noise = ImuNoiseSpec()
    stream = random_stream(rng, 0.1 * n_kf + 0.1)
    tk = np.sort(rng.uniform(0.02, 0.1 * n_kf + 0.05, n_kf))
    tk = np.maximum.accumulate(tk + np.arange(n_kf) * 1e-3)
    bg, ba = rng.normal(0.0, 0.01, 3), rng.normal(0.0, 0.1, 3)
    pre = preintegrate_windows(stream, tk, bg, ba, noise)
    r_bc = lie.exp_so3(rng.normal(0.0, 0.2, 3))
    p_bc = rng.normal(0.0, 0.1, 3)
    R = lie.exp_so3(rng.normal(0.0, 0.1, (n_kf, 3))) @ r_bc.T
    p = rng.normal(0.0, 0.3, (n_kf, 3))
    lm = rng.normal(0.0, 1.0, (n_lm, 3)) + [0.0, 0.0, 5.0]
    near = np.clip(np.searchsorted(stream.t, tk), 0, len(stream.t) - 1)
    return est.FullState(
        R=R, p=p, v=rng.normal(0.0, 1.0, (n_kf, 3)), dbg=rng.normal(0.0, 1e-3, (n_kf, 3)),
        dba=rng.normal(0.0, 1e-2, (n_kf, 3)), bg_ref=np.tile(bg, (n_kf, 1)), ba_ref=np.tile(ba, (n_kf, 1)),
        gyro=stream.gyro[near], t=tk, obs_kf=np.repeat(np.arange(n_kf), n_lm),
        obs_lm=np.tile(np.arange(n_lm), n_kf), obs_uv=rng.uniform(100.0, 500.0, (n_kf * n_lm, 2)),
        landmarks=lm, r_bc=r_bc, p_bc=p_bc, td=float(rng.uniform(-0.05, 0.05)), preint=pre,
        gravity=np.array([0.0, 0.0, -9.81]))


def _offsets(state: est.FullState, i: int, k: int) -> dict:
    N = state.n_keyframes
    kf = {"phi": 0, "p": 3, "v": 6, "bg": 9, "ba": 12}
    g = {"phi_bc": 0, "p_bc": 3, "td": 6}
    out = {name: est.KF_DIM * i + o for name, o in kf.items()}
    out.update({name: est.KF_DIM * N + o for name, o in g.items()})
    out["lm"] = est.KF_DIM * N + est.GLOBAL_DIM + 3 * k
    return out


def check_reprojection(rng, intr: CameraIntrinsics = CameraIntrinsics()) -> float:
    state = random_state(rng)
    i = int(rng.integers(state.n_keyframes))
    k = int(rng.integers(len(state.landmarks)))
    _, _, blocks = est.reprojection_residual(state, i, k, intr)
    off = _offsets(state, i, k)
    worst = 0.0
    for name, ana in blocks.items():
        num = np.zeros_like(ana)
        for d in range(ana.shape[1]):
            dx = np.zeros(state.n_params())
            dx[off[name] + d] = STEP
            rp = est.reprojection_residual(est.retract(state, dx), i, k, intr)[0]
            rm = est.reprojection_residual(est.retract(state, -dx), i, k, intr)[0]
            num[:, d] = (rp - rm) / (2 * STEP)
        worst = max(worst, _rel(num, ana))
    return worst


def check_imu(rng) -> float:
    state = random_state(rng)
    s = int(rng.integers(state.n_keyframes - 1))
    _, _, _, blocks = est.imu_residual(state, s)
    worst = 0.0
    for side, kf in (("i", s), ("j", s + 1)):
        num = np.zeros((15, 15))
        for d in range(15):
            dx = np.zeros(state.n_params())
            dx[est.KF_DIM * kf + d] = STEP
            a = est.imu_residual(est.retract(state, dx), s)
            b = est.imu_residual(est.retract(state, -dx), s)
            num[:, d] = (np.concatenate(a[:2]) - np.concatenate(b[:2])) / (2 * STEP)
        worst = max(worst, _rel(num, blocks[side]))
    return worst


def check_rotation_error(rng) -> float:
    stream = random_stream(rng, 0.7)
    n = 5
    t = np.sort(rng.uniform(0.05, 0.65, n)) + np.arange(n) * 1e-3
    R = lie.exp_so3(rng.normal(0.0, 0.5, (n, 3)))
    poses = [CameraPoseUpToScale(R[j], rng.normal(size=3), float(t[j])) for j in range(n)]
    kfs = build_keyframes(poses, stream, ImuNoiseSpec(), rng.normal(0.0, 0.01, 3))
    dbg = rng.normal(0.0, 1e-3, 3)
    td = float(rng.uniform(-0.03, 0.03))
    r_bc = lie.exp_so3(rng.normal(0.0, 1.0, 3))
    _, Jb, Jt, Jr = rotation_residuals(kfs, dbg, td, r_bc, jacobians=True)
    num_b, num_r = np.zeros_like(Jb), np.zeros_like(Jr)
    for d in range(3):
        e = np.zeros(3)
        e[d] = STEP
        num_b[..., d] = (rotation_residuals(kfs, dbg + e, td, r_bc)
                         - rotation_residuals(kfs, dbg - e, td, r_bc)) / (2 * STEP)
        num_r[..., d] = (rotation_residuals(kfs, dbg, td, r_bc @ lie.exp_so3(e))
                         - rotation_residuals(kfs, dbg, td, r_bc @ lie.exp_so3(-e))) / (2 * STEP)
    num_t = (rotation_residuals(kfs, dbg, td + STEP, r_bc)
             - rotation_residuals(kfs, dbg, td - STEP, r_bc)) / (2 * STEP)
    return max(_rel(num_b, Jb), _rel(num_t, Jt), _rel(num_r, Jr))


CHECKS = {"reprojection": check_reprojection, "imu_residual": check_imu,
          "rotation_error": check_rotation_error}


def jacobian_report(seed: int = 0, points: int = 100) -> dict[str, float]:
    """Worst relative error per Jacobian family over ``points`` random linearization points."""
    rng = np.random.default_rng(seed)
    return {name: max(fn(rng) for _ in range(points)) for name, fn in CHECKS.items()}


def check_preintegration(rng) -> float:
    stream = random_stream(rng, 0.3)
    tk = np.array([0.02, float(rng.uniform(0.1, 0.28))])
    bg, ba = rng.normal(0.0, 0.01, 3), rng.normal(0.0, 0.1, 3)
    noise = ImuNoiseSpec()

    def pre(bg_, ba_):
        p = preintegrate_windows(stream, tk, bg_, ba_, noise, with_covariance=False)
        return p.dR[0], p.dv[0], p.dp[0]

    ref = preintegrate_windows(stream, tk, bg, ba, noise, with_covariance=False)
    worst = 0.0
    for which, ana in (("g", (ref.jg_dR[0], ref.jg_dv[0], ref.jg_dp[0])),
                       ("a", (None, ref.ja_dv[0], ref.ja_dp[0]))):
        num = [np.zeros((3, 3)) for _ in range(3)]
        for d in range(3):
            e = np.zeros(3)
            e[d] = STEP
            plus = pre(bg + e, ba) if which == "g" else pre(bg, ba + e)
            minus = pre(bg - e, ba) if which == "g" else pre(bg, ba - e)
            num[0][:, d] = lie.log_so3(minus[0].T @ plus[0]) / (2 * STEP)
            num[1][:, d] = (plus[1] - minus[1]) / (2 * STEP)
            num[2][:, d] = (plus[2] - minus[2]) / (2 * STEP)
        for n_, a_ in zip(num, ana):
            if a_ is not None:
                worst = max(worst, _rel(n_, a_))
    return worst


CHECKS["preintegration"] = check_preintegration
