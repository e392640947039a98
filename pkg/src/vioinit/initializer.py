"""Three-step initialization: rotation/offset/gyro bias, then scale/gravity/translation, then refinement.

Time convention follows :mod:`vioinit.temporal`: the IMU stamp ``t`` matches
the camera stamp ``t + td``. Compensating an estimated offset therefore moves
camera stamps by ``-td``.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import lie
from .errors import (GravityDegenerate, InsufficientKeyframes, NeverConverged, NotConverged,
                     RankDeficient)
from .imu import GRAVITY_MAGNITUDE, ImuNoiseSpec, ImuStream, PreintegratedBatch, preintegrate_windows
from .temporal import MAX_OFFSET, CameraPoseUpToScale, twists_from_poses

MIN_KEYFRAMES_STEP1 = 2
MIN_KEYFRAMES_LINEAR = 5


@dataclass
class KeyframeSet:
    """Keyframe poses with their twists, gyro anchors and IMU segments to the next keyframe."""

    R: np.ndarray  # (N, 3, 3) camera rotations
    p: np.ndarray  # (N, 3) up-to-scale camera positions
    t: np.ndarray  # (N,) camera stamps after compensation
    omega: np.ndarray
    v_tilde: np.ndarray
    gyro_near: np.ndarray
    preint: PreintegratedBatch
    imu: ImuStream
    noise: ImuNoiseSpec
    hold: str = "centered"
    offset_applied: float = 0.0
    frames: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    @property
    def bias_gyro(self) -> np.ndarray:
        return self.preint.bias_gyro[0]

    @property
    def bias_accel(self) -> np.ndarray:
        return self.preint.bias_accel[0]

    def poses(self) -> list[CameraPoseUpToScale]:
        return [CameraPoseUpToScale(R, p, float(t)) for R, p, t in zip(self.R, self.p, self.t)]

    def with_bias(self, bias_gyro, bias_accel=None) -> "KeyframeSet":
        """Same keyframes, segments re-integrated at a new reference bias."""
        ba = self.bias_accel if bias_accel is None else bias_accel
        pre = preintegrate_windows(self.imu, self.t, bias_gyro, ba, self.noise, self.hold)
        return dataclasses.replace(self, preint=pre)

    def subset(self, start: int, stop: int | None = None) -> "KeyframeSet":
        stop = len(self) if stop is None else stop
        return build_keyframes(self._sources()[start:stop], self.imu, self.noise, self.bias_gyro,
                               self.bias_accel, self.hold, self.offset_applied)

    def _sources(self):
        if self.frames:
            return list(self.frames)
        return self.poses()

    def interpolated(self, td: float):
        """Camera rotations/positions moved forward by ``td`` under constant twist."""
        R = self.R @ lie.exp_so3(self.omega * td)
        p = self.p + self.v_tilde * td
        return R, p


def _pose_of(item) -> CameraPoseUpToScale:
    return item.pose if hasattr(item, "pose") else item


def build_keyframes(items, imu: ImuStream, noise: ImuNoiseSpec, bias_gyro=np.zeros(3),
                    bias_accel=np.zeros(3), hold: str = "centered",
                    offset_applied: float = 0.0) -> KeyframeSet:
    """Assemble a :class:`KeyframeSet` from camera frames (or bare poses).

    ``offset_applied`` is subtracted from each stamp; frames whose shifted
    stamp falls outside the IMU coverage are dropped.
    """
    items = list(items)
    stamps = np.array([_pose_of(it).timestamp for it in items], dtype=float) - offset_applied
    keep = (stamps >= imu.t[0] - 1e-12) & (stamps <= imu.t[-1] + 1e-12)
    items = [it for it, k in zip(items, keep) if k]
    stamps = stamps[keep]
    if len(items) < MIN_KEYFRAMES_STEP1:
        raise InsufficientKeyframes(f"{len(items)} keyframes inside the IMU coverage")
    if np.any(np.diff(stamps) <= 0):
        raise InsufficientKeyframes("keyframe stamps must be strictly increasing")
    R = np.array([_pose_of(it).rotation for it in items], dtype=float)
    p = np.array([_pose_of(it).position for it in items], dtype=float)
    omega, v = twists_from_poses(R, p, stamps)
    near = np.clip(np.searchsorted(imu.t, stamps), 1, len(imu.t) - 1)
    near = np.where(np.abs(imu.t[near - 1] - stamps) <= np.abs(imu.t[near] - stamps), near - 1, near)
    pre = preintegrate_windows(imu, stamps, bias_gyro, bias_accel, noise, hold)
    frames = [it for it in items if hasattr(it, "pose")]
    return KeyframeSet(R, p, stamps, omega, v, imu.gyro[near], pre, imu, noise, hold,
                       float(offset_applied), frames)


def compensate_time_offset(kfs: KeyframeSet, td: float) -> KeyframeSet:
    """Shift camera stamps so that the estimated offset ``td`` is removed.

    Twists and segment bounds are rebuilt against the shifted stamps.
    """
    if td == 0.0:
        return kfs
    return build_keyframes(kfs._sources(), kfs.imu, kfs.noise, kfs.bias_gyro, kfs.bias_accel,
                           kfs.hold, kfs.offset_applied + td)


# ---------------------------------------------------------------------------
# Step 1


@dataclass(frozen=True)
class Step1Config:
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    max_iterations: int = 50
    rel_tol: float = 1e-12
    max_rounds: int = 8
    bias_tol: float = 1e-10
    weighting: str = "info"  # or "identity"
    seed: str = "align"  # "align" or "identity"
    max_offset: float = MAX_OFFSET


@dataclass
class Step1Result:
    delta_bg: np.ndarray
    td: float
    r_bc: np.ndarray
    final_cost: float
    iterations: int
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cost_trace: list = field(default_factory=list)  # one list of accepted costs per re-integration round


def _segment_weights(pre: PreintegratedBatch, mode: str) -> np.ndarray:
    S = len(pre)
    eye = np.broadcast_to(np.eye(3), (S, 3, 3))
    if mode == "identity":
        return eye.copy()
    cov = pre.cov_preint[:, 0:3, 0:3]
    w = np.linalg.eigvalsh(cov)
    if np.any(w[:, 0] <= 1e-14 * np.maximum(w[:, -1], 1e-300)) or np.any(w[:, -1] <= 0):
        return eye.copy()
    inv = np.linalg.inv(cov)
    # scale-free weights keep the LM damping and tolerances unit independent
    inv = inv / np.mean(np.trace(inv, axis1=-2, axis2=-1) / 3.0)
    return 0.5 * (inv + np.swapaxes(inv, -1, -2))


def rotation_residuals(kfs: KeyframeSet, delta_bg, td: float, r_bc, jacobians: bool = False):
    """Per-segment rotation mismatch between IMU and interpolated camera motion.

    Returns ``e`` of shape ``(N-1, 3)`` and, if requested, the Jacobian blocks
    with respect to the gyro bias correction, the offset and the extrinsic
    rotation perturbation (right-multiplied).
    """
    pre = kfs.preint
    delta_bg = np.asarray(delta_bg, float)
    r_cb = r_bc.T
    w_i, w_j = kfs.omega[:-1], kfs.omega[1:]
    jb = _mv(pre.jg_dR, delta_bg)
    dR_corr = pre.dR @ lie.exp_so3(jb)
    R1 = np.swapaxes(dR_corr, -1, -2) @ r_bc
    cam_rel = (lie.exp_so3(-w_i * td) @ np.swapaxes(kfs.R[:-1], -1, -2) @ kfs.R[1:]
               @ lie.exp_so3(w_j * td))
    E = R1 @ cam_rel @ r_cb
    e = lie.log_so3(E)
    if not jacobians:
        return e
    phi2 = lie.log_so3(cam_rel)
    rphi2 = phi2 @ r_bc.T
    Jr_inv_e = lie.right_jacobian_inv(e)
    J_rot = -Jr_inv_e @ lie.right_jacobian(rphi2) @ r_bc @ lie.hat(phi2)
    J_bg = -lie.left_jacobian_inv(e) @ lie.left_jacobian(-jb) @ pre.jg_dR
    D = -np.einsum("nji,njk,nkl,nl->ni", lie.exp_so3(e), R1, lie.left_jacobian(-w_i * td), w_i)
    Ev = np.einsum("ij,njk,nk->ni", r_bc, lie.right_jacobian(w_j * td), w_j)
    J_td = np.einsum("nij,nj->ni", Jr_inv_e, D + Ev)
    return e, J_bg, J_td, J_rot


def _align_rotation(kfs: KeyframeSet) -> np.ndarray:
    """Closed-form R^b_c from pairs of relative rotation vectors, ignoring the offset."""
    phi_b = lie.log_so3(kfs.preint.dR)
    phi_c = lie.log_so3(np.swapaxes(kfs.R[:-1], -1, -2) @ kfs.R[1:])
    M = phi_b.T @ phi_c
    u, _, vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _step1_lm(kfs: KeyframeSet, delta_bg, td, r_bc, W, cfg: Step1Config):
    def cost_of(dbg, tdv, rbc):
        e = rotation_residuals(kfs, dbg, tdv, rbc)
        return float(np.einsum("ni,nij,nj->", e, W, e))

    cost = cost_of(delta_bg, td, r_bc)
    trace = [cost]
    lam = cfg.lambda_init
    it = 0
    converged = cost < 1e-30
    while it < cfg.max_iterations and not converged:
        it += 1
        e, Jb, Jt, Jr = rotation_residuals(kfs, delta_bg, td, r_bc, jacobians=True)
        J = np.concatenate([Jb, Jt[..., None], Jr], axis=-1)  # (S, 3, 7)
        JtW = np.swapaxes(J, -1, -2) @ W
        H = np.einsum("nij,njk->ik", JtW, J)
        g = np.einsum("nij,nj->i", JtW, e)
        while True:
            A = H + lam * np.diag(np.maximum(np.diag(H), 1e-12))
            try:
                dx = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_up
                continue
            n_bg = delta_bg + dx[0:3]
            n_td = td + dx[3]
            n_rbc = r_bc @ lie.exp_so3(dx[4:7])
            n_cost = cost_of(n_bg, n_td, n_rbc) if abs(n_td) <= cfg.max_offset else np.inf
            if n_cost < cost:
                rel = (cost - n_cost) / max(cost, 1e-300)
                delta_bg, td, r_bc = n_bg, n_td, lie.renormalize(n_rbc)
                cost = n_cost
                trace.append(cost)
                lam = max(lam / cfg.lambda_down, 1e-15)
                if rel < cfg.rel_tol or cost < 1e-30:
                    converged = True
                break
            lam *= cfg.lambda_up
            if lam > 1e12:
                # no descent direction left: numerically at a minimum
                converged = True
                break
        if np.linalg.norm(dx) < 1e-15:
            converged = True
    if not converged:
        raise NotConverged(f"step 1 did not converge in {cfg.max_iterations} iterations")
    return delta_bg, td, r_bc, cost, it, trace


def step1_rotation_offset_gyrobias(kfs: KeyframeSet, noise: ImuNoiseSpec | None = None,
                                   init: Step1Result | None = None,
                                   config: Step1Config = Step1Config()) -> Step1Result:
    """Jointly estimate gyro bias correction, time offset and extrinsic rotation.

    Segments are re-integrated at the updated gyro bias between LM rounds. The
    returned ``delta_bg`` is relative to the reference bias of ``kfs``.
    """
    if len(kfs) < MIN_KEYFRAMES_STEP1:
        raise InsufficientKeyframes("step 1 needs at least 2 keyframes")
    if noise is not None and noise != kfs.noise:
        kfs = dataclasses.replace(kfs, noise=noise).with_bias(kfs.bias_gyro)
    bg_ref = kfs.bias_gyro.copy()
    if init is not None:
        td, r_bc = float(init.td), np.array(init.r_bc, float)
        bg = bg_ref + init.delta_bg
    else:
        td = 0.0
        r_bc = _align_rotation(kfs) if config.seed == "align" else np.eye(3)
        bg = bg_ref.copy()
    work = kfs if np.array_equal(bg, bg_ref) else kfs.with_bias(bg)
    total_it = 0
    trace: list = []
    cost = np.inf
    for _ in range(config.max_rounds):
        W = _segment_weights(work.preint, config.weighting)
        dbg, td, r_bc, cost, it, tr = _step1_lm(work, np.zeros(3), td, r_bc, W, config)
        total_it += it
        trace.append(tr)
        bg = bg + dbg
        if np.linalg.norm(dbg) < config.bias_tol:
            break
        work = work.with_bias(bg)
    # final cost against the last re-integration
    W = _segment_weights(work.preint, config.weighting)
    e = rotation_residuals(work, bg - work.bias_gyro, td, r_bc)
    cost = float(np.einsum("ni,nij,nj->", e, W, e))
    return Step1Result(bg - bg_ref, float(td), r_bc, cost, total_it, bg, trace)


# ---------------------------------------------------------------------------
# Steps 2 and 3


@dataclass
class Step2Result:
    scale: float
    gravity: np.ndarray
    p_cb: np.ndarray
    singular_values: np.ndarray
    conditioning: float


@dataclass
class Step3Result:
    scale: float
    gravity: np.ndarray
    accel_bias: np.ndarray
    p_cb: np.ndarray
    delta_theta_xy: np.ndarray
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(9))
    conditioning: float = 1.0


@dataclass(frozen=True)
class LinearConfig:
    robust: bool = True
    passes: int = 2
    huber_k: float = 1.345
    min_conditioning: float = 1e-8


def _triples(kfs: KeyframeSet, s1: Step1Result):
    """Interpolated camera quantities and segment terms per consecutive triple."""
    if len(kfs) < MIN_KEYFRAMES_LINEAR:
        raise InsufficientKeyframes(f"need at least {MIN_KEYFRAMES_LINEAR} keyframes")
    R, p = kfs.interpolated(s1.td)
    pre = kfs.preint
    dbg = s1.bias_gyro - kfs.bias_gyro
    _, dv, dp = pre.corrected(dbg)
    dt = pre.dt_ij
    r_cb = s1.r_bc.T
    sl1, sl2, sl3 = slice(0, -2), slice(1, -1), slice(2, None)
    d12, d23 = dt[:-1], dt[1:]
    return dict(R1=R[sl1], R2=R[sl2], R3=R[sl3], p1=p[sl1], p2=p[sl2], p3=p[sl3],
                d12=d12, d23=d23, dv12=dv[:-1], dp12=dp[:-1], dp23=dp[1:],
                jav12=pre.ja_dv[:-1], jap12=pre.ja_dp[:-1], jap23=pre.ja_dp[1:], r_cb=r_cb)


def _mv(m, v):
    return np.einsum("...ij,...j->...i", m, v)


def _weighted_svd_solve(A, b, cfg: LinearConfig):
    """Solve the stacked system ``A x = b`` (blocks of 3 rows) by SVD with Huber IRLS."""
    n_blocks = A.shape[0] // 3
    w = np.ones(n_blocks)
    passes = cfg.passes if cfg.robust else 0
    for k in range(passes + 1):
        sw = np.repeat(np.sqrt(w), 3)
        u, sv, vt = np.linalg.svd(A * sw[:, None], full_matrices=False)
        cond = sv[-1] / sv[0] if sv[0] > 0 else 0.0
        if cond < cfg.min_conditioning:
            raise RankDeficient(f"conditioning {cond:.3g} below {cfg.min_conditioning:g}")
        x = vt.T @ ((u.T @ (b * sw)) / sv)
        if k == passes:
            break
        r = np.linalg.norm((A @ x - b).reshape(n_blocks, 3), axis=1)
        sigma = 1.4826 * np.median(r)
        if sigma <= 1e-15:
            break
        c = cfg.huber_k * sigma
        w = np.where(r <= c, 1.0, c / np.maximum(r, 1e-300))
    return x, sv, cond


def step2_scale_gravity_translation(kfs: KeyframeSet, s1: Step1Result,
                                    config: LinearConfig = LinearConfig()) -> Step2Result:
    """Scale, gravity and camera-to-body translation from a linear system over keyframe triples."""
    q = _triples(kfs, s1)
    d12, d23 = q["d12"][:, None], q["d23"][:, None]
    lam = (q["p2"] - q["p1"]) * d23 - (q["p3"] - q["p2"]) * d12
    beta = 0.5 * (q["d12"] * q["d23"] ** 2 + q["d12"] ** 2 * q["d23"])
    beta = beta[:, None, None] * np.eye(3)
    phi = (q["R2"] - q["R3"]) * d12[..., None] - (q["R1"] - q["R2"]) * d23[..., None]
    Rb1 = q["R1"] @ q["r_cb"]
    Rb2 = q["R2"] @ q["r_cb"]
    gamma = (_mv(Rb1, q["dp12"] * d23 - q["dv12"] * d12 * d23) - _mv(Rb2, q["dp23"] * d12))
    A = np.concatenate([lam[..., None], beta, phi], axis=-1).reshape(-1, 7)
    b = gamma.reshape(-1)
    x, sv, cond = _weighted_svd_solve(A, b, config)
    return Step2Result(float(x[0]), x[1:4].copy(), x[4:7].copy(), sv, float(cond))


def gravity_frame(g_w, G: float = GRAVITY_MAGNITUDE) -> np.ndarray:
    """Rotation taking the reference gravity [0, 0, -G] onto the direction of ``g_w``."""
    ge = np.array([0.0, 0.0, -1.0])
    gw = np.asarray(g_w, float) / np.linalg.norm(g_w)
    cross = np.cross(ge, gw)
    n = np.linalg.norm(cross)
    if n < 1e-6:
        # aligned directions need no rotation; opposed ones leave the axis undefined
        if ge @ gw > 0:
            return np.eye(3)
        raise GravityDegenerate("gravity estimate is opposite to the reference axis")
    theta = np.arctan2(n, ge @ gw)
    return lie.exp_so3(cross / n * theta)


def step3_refine(kfs: KeyframeSet, s1: Step1Result, s2: Step2Result, G: float = GRAVITY_MAGNITUDE,
                 config: LinearConfig = LinearConfig(), iterations: int = 1) -> Step3Result:
    """Accelerometer bias plus refined scale, gravity direction and translation.

    ``iterations > 1`` re-linearizes the gravity perturbation about the
    previous refined direction.
    """
    q = _triples(kfs, s1)
    d12, d23 = q["d12"], q["d23"]
    G_e = np.array([0.0, 0.0, -G])
    lam = (q["p2"] - q["p1"]) * d23[:, None] - (q["p3"] - q["p2"]) * d12[:, None]
    xi = (q["R2"] - q["R3"]) * d12[:, None, None] - (q["R1"] - q["R2"]) * d23[:, None, None]
    Rb1 = q["R1"] @ q["r_cb"]
    Rb2 = q["R2"] @ q["r_cb"]
    zeta = (Rb1 @ (q["jav12"] * (d12 * d23)[:, None, None] - q["jap12"] * d23[:, None, None])
            + Rb2 @ q["jap23"] * d12[:, None, None])
    gamma = _mv(Rb1, q["dp12"] * d23[:, None] - q["dv12"] * (d12 * d23)[:, None]) \
        - _mv(Rb2, q["dp23"] * d12[:, None])
    c = 0.5 * (d12 * d23 ** 2 + d12 ** 2 * d23)

    R_we = gravity_frame(s2.gravity, G)
    for _ in range(max(1, iterations)):
        phi = (-(R_we @ lie.hat(G_e)))[None] * c[:, None, None]
        phi = phi[:, :, 0:2]
        psi = gamma - (R_we @ G_e)[None] * c[:, None]
        A = np.concatenate([lam[..., None], phi, zeta, xi], axis=-1).reshape(-1, 9)
        b = psi.reshape(-1)
        x, sv, cond = _weighted_svd_solve(A, b, config)
        dth = np.array([x[1], x[2], 0.0])
        R_we = R_we @ lie.exp_so3(dth)
    gravity = R_we @ G_e
    return Step3Result(float(x[0]), gravity, x[3:6].copy(), x[6:9].copy(), x[1:3].copy(), sv,
                       float(cond))


def estimate_velocities(kfs: KeyframeSet, s3: Step3Result, s1: Step1Result) -> np.ndarray:
    """Body velocities at every keyframe from consecutive position relations."""
    R, p = kfs.interpolated(s1.td)
    pre = kfs.preint
    dbg = s1.bias_gyro - kfs.bias_gyro
    dba = s3.accel_bias - kfs.bias_accel
    _, dv, dp = pre.corrected(dbg, dba)
    dt = pre.dt_ij[:, None]
    Rb = R @ s1.r_bc.T
    g = s3.gravity
    s = s3.scale
    v = (s * (p[1:] - p[:-1]) - 0.5 * g * dt ** 2 - _mv(Rb[:-1], dp)
         - _mv(R[:-1] - R[1:], s3.p_cb)) / dt
    v_last = v[-1] + g * dt[-1] + Rb[-2] @ dv[-1]
    return np.vstack([v, v_last])


def body_states(kfs: KeyframeSet, s1: Step1Result, s3: Step3Result):
    """Metric body rotations and positions at the keyframe IMU stamps."""
    R, p = kfs.interpolated(s1.td)
    Rb = R @ s1.r_bc.T
    pb = _mv(R, s3.p_cb) + s3.scale * p
    return Rb, pb


# ---------------------------------------------------------------------------
# Drivers


@dataclass
class BatchResult:
    step1: Step1Result
    step2: Step2Result
    step3: Step3Result
    velocities: np.ndarray
    td_total: float
    keyframes: KeyframeSet
    compensations: int
    timings: dict


def initialize_batch(items, imu: ImuStream, noise: ImuNoiseSpec, hold: str = "centered",
                     step1_config: Step1Config = Step1Config(),
                     linear_config: LinearConfig = LinearConfig(), step3_iterations: int = 1,
                     max_compensations: int = 6, offset_tol: float = 1e-6) -> BatchResult:
    """Three-step initialization on a fixed keyframe set.

    Step 1 is repeated after each offset compensation until the residual
    offset increment drops below ``offset_tol``.
    """
    t0 = time.perf_counter()
    kfs = build_keyframes(items, imu, noise, hold=hold)
    s1 = step1_rotation_offset_gyrobias(kfs, config=step1_config)
    n_comp = 0
    while abs(s1.td) > offset_tol and n_comp < max_compensations:
        kfs = compensate_time_offset(kfs.with_bias(s1.bias_gyro), s1.td)
        s1 = step1_rotation_offset_gyrobias(
            kfs, init=Step1Result(np.zeros(3), 0.0, s1.r_bc, 0.0, 0), config=step1_config)
        n_comp += 1
    t1 = time.perf_counter()
    kfs = kfs.with_bias(s1.bias_gyro)
    s1 = dataclasses.replace(s1, delta_bg=np.zeros(3))
    s2 = step2_scale_gravity_translation(kfs, s1, linear_config)
    s3 = step3_refine(kfs, s1, s2, config=linear_config, iterations=step3_iterations)
    vel = estimate_velocities(kfs, s3, s1)
    t2 = time.perf_counter()
    return BatchResult(s1, s2, s3, vel, kfs.offset_applied + s1.td, kfs, n_comp,
                       {"step1": t1 - t0, "linear": t2 - t1})


@dataclass(frozen=True)
class InitPolicy:
    min_keyframes: int = 10
    window: int = 10
    std_rotation_deg: float = 0.2
    std_translation: float = 0.005
    std_offset: float = 0.0005
    std_scale: float = 0.01
    max_keyframes: int | None = None
    max_time: float | None = None
    step3_iterations: int = 1
    hold: str = "centered"
    step1: Step1Config = Step1Config()
    linear: LinearConfig = LinearConfig()


@dataclass
class InitializationResult:
    step1: Step1Result | None
    step3: Step3Result | None
    velocities: np.ndarray | None
    converged: bool
    relaunch_count: int
    td_total: float = 0.0
    converged_at: float = float("nan")
    keyframes: KeyframeSet | None = None
    history: list = field(default_factory=list)


def _converged(hist: list, policy: InitPolicy) -> bool:
    if len(hist) < policy.window:
        return False
    last = hist[-policy.window:]
    ypr = np.degrees(np.array([lie.to_ypr(h["r_bc"]) for h in last]))
    ypr = np.unwrap(ypr, period=360.0, axis=0)
    p = np.array([h["p_cb"] for h in last])
    td = np.array([h["td_total"] for h in last])
    s = np.array([h["scale"] for h in last])
    return bool(np.all(np.std(ypr, axis=0, ddof=1) < policy.std_rotation_deg)
                and np.all(np.std(p, axis=0, ddof=1) < policy.std_translation)
                and np.std(td, ddof=1) < policy.std_offset
                and np.std(s, ddof=1) / abs(np.mean(s)) < policy.std_scale)


def run_initialization(frames, imu: ImuStream, noise: ImuNoiseSpec,
                       policy: InitPolicy = InitPolicy()) -> InitializationResult:
    """Incremental initialization over a keyframe stream with offset compensation and relaunch.

    After every Step-1 solve the estimated increment is folded into the
    camera stamps. Increments larger than one IMU period additionally discard
    the collected keyframes and skip Steps 2-3 for that execution.
    """
    frames = list(frames)
    start_time = _pose_of(frames[0]).timestamp
    offset = 0.0
    relaunches = 0
    first = 0
    hist: list = []
    prev: Step1Result | None = None
    limit = len(frames) if policy.max_keyframes is None else min(len(frames), policy.max_keyframes)
    period = noise.period
    for n in range(first + policy.min_keyframes, limit + 1):
        if n - first < policy.min_keyframes:
            continue
        if policy.max_time is not None and _pose_of(frames[n - 1]).timestamp - start_time > policy.max_time:
            break
        try:
            bg = prev.bias_gyro if prev is not None else np.zeros(3)
            kfs = build_keyframes(frames[first:n], imu, noise, bg, hold=policy.hold,
                                  offset_applied=offset)
            init = None if prev is None else dataclasses.replace(prev, delta_bg=np.zeros(3), td=0.0)
            s1 = step1_rotation_offset_gyrobias(kfs, init=init, config=policy.step1)
        except (InsufficientKeyframes, NotConverged):
            continue
        rec = {"n": n, "time": _pose_of(frames[n - 1]).timestamp - start_time, "increment": s1.td,
               "relaunch": False}
        prev = s1
        offset += s1.td
        if abs(s1.td) > period:
            relaunches += 1
            first = n
            hist.clear()
            rec["relaunch"] = True
            rec["td_total"] = offset
            continue
        try:
            kfs = compensate_time_offset(kfs.with_bias(s1.bias_gyro), s1.td)
            s1z = dataclasses.replace(s1, delta_bg=np.zeros(3), td=0.0)
            s2 = step2_scale_gravity_translation(kfs, s1z, policy.linear)
            s3 = step3_refine(kfs, s1z, s2, config=policy.linear, iterations=policy.step3_iterations)
        except (RankDeficient, GravityDegenerate, InsufficientKeyframes):
            continue
        rec.update(r_bc=s1.r_bc, p_cb=s3.p_cb, td_total=offset, scale=s3.scale)
        hist.append(rec)
        if _converged(hist, policy):
            vel = estimate_velocities(kfs, s3, s1z)
            return InitializationResult(s1z, s3, vel, True, relaunches, offset, rec["time"], kfs,
                                        list(hist))
    raise NeverConverged(f"no convergence after {limit} keyframes ({relaunches} relaunches)")
