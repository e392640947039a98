"""Visual-inertial least squares with a jointly estimated time offset and extrinsics.

Per-keyframe perturbation layout (15): rotation, position, velocity, gyro
bias correction, accel bias correction. Shared block (7): extrinsic rotation,
extrinsic translation, time offset. Landmarks add 3 each.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import lie
from .errors import DimensionMismatch, NotConverged, PointBehindCamera, SingularNormalEquations
from .imu import PreintegratedBatch, PreintegratedImu, _safe_inverse
from .simulator import CameraIntrinsics
from .temporal import Extrinsics

KF_DIM = 15
GLOBAL_DIM = 7
MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class RobustCost:
    kind: str = "huber"
    threshold: float = 5.991

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("robust threshold must be positive")
        if self.kind not in ("huber", "none"):
            raise ValueError(f"unknown robust kind {self.kind!r}")

    def rho(self, s):
        """Robust value and first derivative for squared (whitened) norms ``s``."""
        s = np.asarray(s, float)
        if self.kind == "none":
            return s, np.ones_like(s)
        d2 = self.threshold
        root = np.sqrt(np.maximum(s, 1e-300))
        inlier = s <= d2
        val = np.where(inlier, s, 2.0 * np.sqrt(d2) * root - d2)
        w = np.where(inlier, 1.0, np.sqrt(d2) / root)
        return val, w


@dataclass
class KeyframeState:
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    delta_bg: np.ndarray
    delta_ba: np.ndarray
    bias_ref_gyro: np.ndarray
    bias_ref_accel: np.ndarray
    gyro: np.ndarray
    timestamp: float
    landmark_ids: np.ndarray
    pixels: np.ndarray


@dataclass
class FullState:
    """Window state stored column-wise; ``keyframe(i)`` gives the per-keyframe view."""

    R: np.ndarray
    p: np.ndarray
    v: np.ndarray
    dbg: np.ndarray
    dba: np.ndarray
    bg_ref: np.ndarray
    ba_ref: np.ndarray
    gyro: np.ndarray
    t: np.ndarray
    obs_kf: np.ndarray
    obs_lm: np.ndarray
    obs_uv: np.ndarray
    landmarks: np.ndarray
    r_bc: np.ndarray
    p_bc: np.ndarray
    td: float
    preint: PreintegratedBatch | None
    gravity: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        if self.preint is not None and len(self.preint) != n - 1:
            raise DimensionMismatch("need one IMU segment per consecutive keyframe pair")
        if len(self.obs_lm) and (self.obs_lm.max() >= len(self.landmarks) or self.obs_lm.min() < 0):
            raise DimensionMismatch("observation references a missing landmark")

    @property
    def n_keyframes(self) -> int:
        return len(self.t)

    @property
    def extrinsics(self) -> Extrinsics:
        return Extrinsics(self.r_bc, self.p_bc)

    @property
    def bias_gyro(self) -> np.ndarray:
        return self.bg_ref + self.dbg

    @property
    def bias_accel(self) -> np.ndarray:
        return self.ba_ref + self.dba

    def keyframe(self, i: int) -> KeyframeState:
        m = self.obs_kf == i
        return KeyframeState(self.R[i], self.p[i], self.v[i], self.dbg[i], self.dba[i],
                             self.bg_ref[i], self.ba_ref[i], self.gyro[i], float(self.t[i]),
                             self.obs_lm[m], self.obs_uv[m])

    def copy(self) -> "FullState":
        out = dataclasses.replace(self)
        for f in ("R", "p", "v", "dbg", "dba", "landmarks", "r_bc", "p_bc"):
            setattr(out, f, np.array(getattr(self, f), copy=True))
        return out

    def n_params(self) -> int:
        return KF_DIM * self.n_keyframes + GLOBAL_DIM + 3 * len(self.landmarks)


def _mv(m, v):
    return np.einsum("...ij,...j->...i", m, v)


def _T(m):
    return np.swapaxes(m, -1, -2)


def _segment_sum(idx, vals, n):
    """``out[k] = sum(vals[idx == k])``; a sparse product is much faster than ``np.add.at``."""
    vals = np.asarray(vals)
    m = len(idx)
    inc = sp.csr_matrix((np.ones(m), (idx, np.arange(m))), shape=(n, m))
    return np.asarray(inc @ vals.reshape(m, -1)).reshape((n,) + vals.shape[1:])


# ---------------------------------------------------------------------------
# Residuals


def _camera_terms(state: FullState, kf, lm):
    R = state.R[kf]
    w = state.gyro[kf] - state.bg_ref[kf] - state.dbg[kf]
    wt = w * state.td
    Rtd = lie.exp_so3(wt)
    r_cb = state.r_bc.T
    A = r_cb @ Rtd
    C = state.landmarks[lm] - state.p[kf] + state.v[kf] * state.td
    x = _mv(_T(R), C)
    pc = _mv(A, x) - r_cb @ state.p_bc
    return R, w, wt, A, C, x, pc


def transform_point_to_camera(state: FullState, i: int, k: int) -> np.ndarray:
    """Landmark ``k`` in the camera frame of keyframe ``i``, accounting for the time offset."""
    return _camera_terms(state, np.array([i]), np.array([k]))[-1][0]


def _project(pc, intr: CameraIntrinsics):
    X, Y, Z = pc[..., 0], pc[..., 1], pc[..., 2]
    u = np.stack([intr.fx * X / Z + intr.cx, intr.fy * Y / Z + intr.cy], axis=-1)
    J = np.zeros(pc.shape[:-1] + (2, 3))
    J[..., 0, 0] = intr.fx / Z
    J[..., 0, 2] = -intr.fx * X / Z ** 2
    J[..., 1, 1] = intr.fy / Z
    J[..., 1, 2] = -intr.fy * Y / Z ** 2
    return u, J


def _reprojection_batch(state: FullState, kf, lm, uv, intr: CameraIntrinsics, jacobians: bool):
    R, w, wt, A, C, x, pc = _camera_terms(state, kf, lm)
    valid = pc[:, 2] > MIN_DEPTH
    safe = np.where(valid[:, None], pc, np.array([0.0, 0.0, 1.0]))
    u, Jpi = _project(safe, intr)
    r = uv - u
    if not jacobians:
        return r, valid, None
    dr_dpc = -Jpi
    Jr_w = lie.right_jacobian(wt)
    xh = lie.hat(x)
    ARt = A @ _T(R)
    td = state.td
    blocks = {
        "phi": A @ xh,
        "p": -A,
        "v": ARt * td,
        "bg": A @ xh @ Jr_w * td,
        "ba": np.zeros_like(A),
        "phi_bc": lie.hat(pc),
        "p_bc": np.broadcast_to(-np.eye(3), A.shape),
        "lm": ARt,
        "td": _mv(A, _mv(_T(R), state.v[kf]) + _mv(lie.hat(_mv(Jr_w, w)), x))[..., None],
    }
    return r, valid, {k: dr_dpc @ b for k, b in blocks.items()}


def reprojection_residual(state: FullState, i: int, k: int, intrinsics: CameraIntrinsics,
                          robust: RobustCost = RobustCost(), pixel_sigma: float = 1.0):
    """Pixel residual ``u - pi(p_c)`` for landmark ``k`` seen from keyframe ``i``.

    Returns ``(r, cost, blocks)``; ``blocks`` maps each perturbation name to
    its ``2 x dim`` Jacobian.
    """
    m = np.flatnonzero((state.obs_kf == i) & (state.obs_lm == k))
    if m.size == 0:
        raise KeyError(f"keyframe {i} does not observe landmark {k}")
    m = m[:1]
    r, valid, J = _reprojection_batch(state, state.obs_kf[m], state.obs_lm[m], state.obs_uv[m],
                                      intrinsics, True)
    if not valid[0]:
        raise PointBehindCamera(f"landmark {k} is behind keyframe {i}")
    cost, _ = robust.rho(np.sum(r[0] ** 2) / pixel_sigma ** 2)
    return r[0], float(cost), {key: b[0] for key, b in J.items()}


def _imu_batch(state: FullState, jacobians: bool):
    pre = state.preint
    i = np.arange(state.n_keyframes - 1)
    j = i + 1
    Ri, Rj = state.R[i], state.R[j]
    T = pre.dt_ij[:, None]
    g = state.gravity
    dbg = state.dbg[i]
    dba = state.dba[i]
    jb = _mv(pre.jg_dR, dbg)
    dR = pre.dR @ lie.exp_so3(jb)
    E = _T(dR) @ _T(Ri) @ Rj
    eR = lie.log_so3(E)
    yv = state.v[j] - state.v[i] - g * T
    yp = state.p[j] - state.p[i] - state.v[i] * T - 0.5 * g * T ** 2
    ev = _mv(_T(Ri), yv) - (pre.dv + _mv(pre.jg_dv, dbg) + _mv(pre.ja_dv, dba))
    ep = _mv(_T(Ri), yp) - (pre.dp + _mv(pre.jg_dp, dbg) + _mv(pre.ja_dp, dba))
    eb = np.concatenate([state.bias_gyro[j] - state.bias_gyro[i],
                         state.bias_accel[j] - state.bias_accel[i]], axis=-1)
    e9 = np.concatenate([eR, ev, ep], axis=-1)
    if not jacobians:
        return e9, eb, None, None
    S = len(i)
    Ji = np.zeros((S, 15, 15))
    Jj = np.zeros((S, 15, 15))
    Jr_inv = lie.right_jacobian_inv(eR)
    eye = np.eye(3)
    # rotation error
    Ji[:, 0:3, 0:3] = -Jr_inv @ _T(Rj) @ Ri
    Ji[:, 0:3, 9:12] = -Jr_inv @ _T(E) @ lie.right_jacobian(jb) @ pre.jg_dR
    Jj[:, 0:3, 0:3] = Jr_inv
    # velocity error
    Ji[:, 3:6, 0:3] = lie.hat(_mv(_T(Ri), yv))
    Ji[:, 3:6, 6:9] = -_T(Ri)
    Ji[:, 3:6, 9:12] = -pre.jg_dv
    Ji[:, 3:6, 12:15] = -pre.ja_dv
    Jj[:, 3:6, 6:9] = _T(Ri)
    # position error
    Ji[:, 6:9, 0:3] = lie.hat(_mv(_T(Ri), yp))
    Ji[:, 6:9, 3:6] = -eye
    Ji[:, 6:9, 6:9] = -_T(Ri) * T[:, :, None]
    Ji[:, 6:9, 9:12] = -pre.jg_dp
    Ji[:, 6:9, 12:15] = -pre.ja_dp
    Jj[:, 6:9, 3:6] = _T(Ri) @ Rj
    # bias random walk
    Ji[:, 9:15, 9:15] = -np.eye(6)
    Jj[:, 9:15, 9:15] = np.eye(6)
    return e9, eb, Ji, Jj


def _batch_info(cov: np.ndarray, weighting: str = "full") -> np.ndarray:
    """Per-segment information; ``block`` ignores cross-covariances, ``identity`` ignores covariance."""
    if weighting == "identity" or not len(cov):
        return np.broadcast_to(np.eye(cov.shape[-1]), cov.shape).copy()
    if weighting == "block":
        out = np.zeros_like(cov)
        for b in range(0, cov.shape[-1], 3):
            out[:, b:b + 3, b:b + 3] = [_safe_inverse(c) for c in cov[:, b:b + 3, b:b + 3]]
        return out
    if weighting != "full":
        raise ValueError(f"unknown IMU weighting {weighting!r}")
    return np.stack([_safe_inverse(c) for c in cov])


def imu_residual(state: FullState, i: int, robust: RobustCost = RobustCost(threshold=16.92)):
    """Preintegration residual between keyframes ``i`` and ``i + 1``.

    Returns ``(e9, eb, cost, blocks)`` where ``blocks`` has the ``15 x 15``
    Jacobians with respect to both keyframes.
    """
    e9, eb, Ji, Jj = _imu_batch(state, True)
    seg: PreintegratedImu = state.preint[i]
    c1, _ = robust.rho(e9[i] @ seg.info_preint @ e9[i])
    c2, _ = robust.rho(eb[i] @ seg.info_walk @ eb[i])
    return e9[i], eb[i], float(c1 + c2), {"i": Ji[i], "j": Jj[i]}


# ---------------------------------------------------------------------------
# Retraction


def retract(state: FullState, delta, free: np.ndarray | None = None) -> FullState:
    """Apply a perturbation: rotations right-multiplied, positions in the body frame, rest additive.

    ``delta`` covers every parameter, or only the entries selected by the
    boolean mask ``free``.
    """
    delta = np.asarray(delta, float)
    n_all = state.n_params()
    if free is not None:
        free = np.asarray(free, bool)
        if free.shape != (n_all,) or delta.shape != (int(free.sum()),):
            raise DimensionMismatch("delta does not match the free variables")
        full = np.zeros(n_all)
        full[free] = delta
        delta = full
    elif delta.shape != (n_all,):
        raise DimensionMismatch(f"expected {n_all} entries, got {delta.shape}")
    N = state.n_keyframes
    kd = delta[: KF_DIM * N].reshape(N, KF_DIM)
    gd = delta[KF_DIM * N: KF_DIM * N + GLOBAL_DIM]
    ld = delta[KF_DIM * N + GLOBAL_DIM:].reshape(-1, 3)
    out = state.copy()
    out.p = state.p + _mv(state.R, kd[:, 3:6])
    out.R = lie.renormalize(state.R @ lie.exp_so3(kd[:, 0:3]))
    out.v = state.v + kd[:, 6:9]
    out.dbg = state.dbg + kd[:, 9:12]
    out.dba = state.dba + kd[:, 12:15]
    out.p_bc = state.p_bc + state.r_bc @ gd[3:6]
    out.r_bc = lie.renormalize(state.r_bc @ lie.exp_so3(gd[0:3]))
    out.td = float(state.td + gd[6])
    out.landmarks = state.landmarks + ld
    return out


# ---------------------------------------------------------------------------
# Optimizer


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 30
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    rel_tol: float = 1e-10
    abs_tol: float = 1e-15
    pixel_sigma: float = 1.0
    reproj_robust: RobustCost = RobustCost("huber", 5.991)
    imu_robust: RobustCost = RobustCost("huber", 16.92)
    schur_above: int = 20
    fix_extrinsics: bool = False
    fix_offset: bool = False
    use_imu: bool = True
    imu_weighting: str = "full"
    strict: bool = False


@dataclass
class OptimizeReport:
    mode: str
    initial_cost: float
    final_cost: float
    iterations: int
    accepted: int
    cost_trace: list = field(default_factory=list)
    dropped_observations: int = 0
    converged: bool = False
    free_keyframes: tuple = ()
    used_schur: bool = False


def _free_mask(state: FullState, mode: str, window: int, cfg: SolverConfig):
    N, L = state.n_keyframes, len(state.landmarks)
    kf_free = np.ones((N, KF_DIM), bool)
    if mode == "global":
        kf_free[0, 0:6] = False
        first = 0
    elif mode == "local":
        first = max(0, N - window)
        kf_free[:first] = False
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not cfg.use_imu:
        kf_free[:, 6:15] = False
    g_free = np.ones(GLOBAL_DIM, bool)
    if cfg.fix_extrinsics:
        g_free[0:6] = False
    if cfg.fix_offset:
        g_free[6] = False
    lm_free = np.zeros(L, bool)
    lm_free[state.obs_lm[state.obs_kf >= first]] = True
    mask = np.concatenate([kf_free.ravel(), g_free, np.repeat(lm_free, 3)])
    return mask, tuple(range(first, N))


def total_cost(state: FullState, intr: CameraIntrinsics, cfg: SolverConfig = SolverConfig()):
    """Robust objective and the number of observations dropped for lying behind the camera."""
    r, valid, _ = _reprojection_batch(state, state.obs_kf, state.obs_lm, state.obs_uv, intr, False)
    s = np.sum(r[valid] ** 2, axis=-1) / cfg.pixel_sigma ** 2
    c_proj, _ = cfg.reproj_robust.rho(s)
    if not cfg.use_imu:
        return float(c_proj.sum()), int((~valid).sum())
    e9, eb, _, _ = _imu_batch(state, False)
    I9 = _batch_info(state.preint.cov_preint, cfg.imu_weighting)
    I6 = _batch_info(state.preint.cov_walk, cfg.imu_weighting)
    c9, _ = cfg.imu_robust.rho(np.einsum("ni,nij,nj->n", e9, I9, e9))
    c6, _ = cfg.imu_robust.rho(np.einsum("ni,nij,nj->n", eb, I6, eb))
    return float(c_proj.sum() + c9.sum() + c6.sum()), int((~valid).sum())


def _normal_equations(state: FullState, intr: CameraIntrinsics, cfg: SolverConfig):
    """Gauss-Newton blocks with IRLS robust weights.

    Returns the dense pose/shared block, the landmark blocks and the coupling
    entries, all over the full (unmasked) parameter vector.
    """
    N, L = state.n_keyframes, len(state.landmarks)
    P = KF_DIM * N + GLOBAL_DIM
    kf, lm = state.obs_kf, state.obs_lm
    r, valid, J = _reprojection_batch(state, kf, lm, state.obs_uv, intr, True)
    kf, lm, r = kf[valid], lm[valid], r[valid]
    J = {k: b[valid] for k, b in J.items()}
    s = np.sum(r ** 2, axis=-1) / cfg.pixel_sigma ** 2
    _, w = cfg.reproj_robust.rho(s)
    sw = np.sqrt(w) / cfg.pixel_sigma
    Jk = np.concatenate([J["phi"], J["p"], J["v"], J["bg"], J["ba"]], axis=-1) * sw[:, None, None]
    Jg = np.concatenate([J["phi_bc"], J["p_bc"], J["td"]], axis=-1) * sw[:, None, None]
    Jl = J["lm"] * sw[:, None, None]
    rw = r * sw[:, None]

    Hpp = np.zeros((P, P))
    gp = np.zeros(P)
    kk = _segment_sum(kf, _T(Jk) @ Jk, N)
    kg = _segment_sum(kf, _T(Jk) @ Jg, N)
    gk = _segment_sum(kf, _mv(_T(Jk), rw), N)
    G0 = KF_DIM * N
    for n in range(N):
        sl = slice(KF_DIM * n, KF_DIM * (n + 1))
        Hpp[sl, sl] += kk[n]
        Hpp[sl, G0:] += kg[n]
        Hpp[G0:, sl] += kg[n].T
        gp[sl] += gk[n]
    Jg2 = Jg.reshape(-1, GLOBAL_DIM)
    Hpp[G0:, G0:] += Jg2.T @ Jg2
    gp[G0:] += Jg2.T @ rw.ravel()

    Hll = _segment_sum(lm, _T(Jl) @ Jl, L)
    gl = _segment_sum(lm, _mv(_T(Jl), rw), L)
    Hgl = _segment_sum(lm, _T(Jg) @ Jl, L)
    Hkl = _T(Jk) @ Jl  # one block per observation

    if cfg.use_imu:
        _add_imu_terms(state, cfg, Hpp, gp)
    return dict(Hpp=Hpp, gp=gp, Hll=Hll, gl=gl, Hgl=Hgl, Hkl=Hkl, obs_kf=kf, obs_lm=lm,
                dropped=int((~valid).sum()))


def _add_imu_terms(state: FullState, cfg: SolverConfig, Hpp, gp):
    N = state.n_keyframes
    e9, eb, Ji, Jj = _imu_batch(state, True)
    I9 = _batch_info(state.preint.cov_preint, cfg.imu_weighting)
    I6 = _batch_info(state.preint.cov_walk, cfg.imu_weighting)
    _, w9 = cfg.imu_robust.rho(np.einsum("ni,nij,nj->n", e9, I9, e9))
    _, w6 = cfg.imu_robust.rho(np.einsum("ni,nij,nj->n", eb, I6, eb))
    info = np.zeros((N - 1, 15, 15))
    info[:, 0:9, 0:9] = I9 * w9[:, None, None]
    info[:, 9:15, 9:15] = I6 * w6[:, None, None]
    e15 = np.concatenate([e9, eb], axis=-1)
    for sgm in range(N - 1):
        a = slice(KF_DIM * sgm, KF_DIM * (sgm + 1))
        b = slice(KF_DIM * (sgm + 1), KF_DIM * (sgm + 2))
        JiW = Ji[sgm].T @ info[sgm]
        JjW = Jj[sgm].T @ info[sgm]
        Hpp[a, a] += JiW @ Ji[sgm]
        Hpp[a, b] += JiW @ Jj[sgm]
        Hpp[b, a] += JjW @ Ji[sgm]
        Hpp[b, b] += JjW @ Jj[sgm]
        gp[a] += JiW @ e15[sgm]
        gp[b] += JjW @ e15[sgm]


def _prepare(ne, N, L, mask):
    """Restrict the normal equations to the free variables; coupling block as a dense 2-D matrix."""
    P = KF_DIM * N + GLOBAL_DIM
    pmask = mask[:P]
    lm_free = mask[P::3]
    col_of = np.full(L, -1)
    col_of[lm_free] = np.arange(int(lm_free.sum()))
    kf, lm, Hkl = ne["obs_kf"], ne["obs_lm"], ne["Hkl"]
    keep = col_of[lm] >= 0
    kf, lm, Hkl = kf[keep], lm[keep], Hkl[keep]
    rows = np.broadcast_to((KF_DIM * kf)[:, None, None] + np.arange(KF_DIM)[:, None], Hkl.shape)
    cols = np.broadcast_to((3 * col_of[lm])[:, None, None] + np.arange(3), Hkl.shape)
    Hgl = ne["Hgl"][lm_free]
    n_l = len(Hgl)
    grows = np.broadcast_to((KF_DIM * N + np.arange(GLOBAL_DIM))[None, :, None], Hgl.shape)
    gcols = np.broadcast_to((3 * np.arange(n_l))[:, None, None] + np.arange(3), Hgl.shape)
    W = sp.coo_matrix((np.concatenate([Hkl.ravel(), Hgl.ravel()]),
                       (np.concatenate([rows.ravel(), grows.ravel()]),
                        np.concatenate([cols.ravel(), gcols.ravel()]))),
                      shape=(P, 3 * n_l)).toarray()[pmask]
    return dict(Hpp=ne["Hpp"][np.ix_(pmask, pmask)], gp=ne["gp"][pmask], Hll=ne["Hll"][lm_free],
                gl=ne["gl"][lm_free], W=W)


def _solve(prep, lam, use_schur):
    Hpp = prep["Hpp"].copy()
    gp, gl, W = prep["gp"], prep["gl"], prep["W"]
    Hpp[np.diag_indices_from(Hpp)] += lam * np.maximum(np.diag(prep["Hpp"]), 1e-9)
    Hll = prep["Hll"]
    dl = np.diagonal(Hll, axis1=1, axis2=2)
    Hll = Hll + lam * np.maximum(dl, 1e-9)[:, :, None] * np.eye(3)
    n_l = Hll.shape[0]
    if use_schur:
        Hll_inv = np.linalg.inv(Hll)
        WD = (W.reshape(len(gp), n_l, 1, 3) @ Hll_inv).reshape(len(gp), -1)
        S = Hpp - WD @ W.T
        rhs = -gp + WD @ gl.ravel()
        cf = scipy.linalg.cho_factor(0.5 * (S + S.T))
        dxp = scipy.linalg.cho_solve(cf, rhs)
        dxl = -_mv(Hll_inv, gl + (dxp @ W).reshape(n_l, 3)).ravel()
    else:
        Hll_d = scipy.linalg.block_diag(*Hll) if n_l else np.zeros((0, 0))
        H = np.block([[Hpp, W], [W.T, Hll_d]])
        g = np.concatenate([gp, gl.ravel()])
        cf = scipy.linalg.cho_factor(0.5 * (H + H.T))
        dx = scipy.linalg.cho_solve(cf, -g)
        dxp, dxl = dx[: len(gp)], dx[len(gp):]
    return np.concatenate([dxp, dxl])


def optimize(state: FullState, intrinsics: CameraIntrinsics, mode: str = "global", window: int = 10,
             config: SolverConfig = SolverConfig()):
    """Levenberg-Marquardt over the window; returns the new state and an :class:`OptimizeReport`.

    ``global`` frees every keyframe except the pose of the first one;
    ``local`` frees only the newest ``window`` keyframes and the landmarks
    they observe, keeping older residuals as fixed constraints.
    """
    mask, free_kfs = _free_mask(state, mode, window, config)
    N, L = state.n_keyframes, len(state.landmarks)
    use_schur = len(free_kfs) > config.schur_above
    cost, dropped = total_cost(state, intrinsics, config)
    report = OptimizeReport(mode, cost, cost, 0, 0, [cost], dropped, False, free_kfs, use_schur)
    lam = config.lambda_init
    if cost < config.abs_tol:
        report.converged = True
        return state, report
    for it in range(config.max_iterations):
        report.iterations = it + 1
        ne = _normal_equations(state, intrinsics, config)
        if not np.all(np.isfinite(ne["Hpp"])) or not np.all(np.isfinite(ne["gp"])):
            raise SingularNormalEquations("non-finite normal equations")
        prep = _prepare(ne, N, L, mask)
        accepted = solved = False
        while lam < 1e12:
            try:
                dx = _solve(prep, lam, use_schur)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                lam *= config.lambda_up
                continue
            solved = True
            cand = retract(state, dx, mask)
            c_new, d_new = total_cost(cand, intrinsics, config)
            if c_new < cost:
                rel = (cost - c_new) / cost
                state, cost = cand, c_new
                report.dropped_observations = d_new
                report.cost_trace.append(cost)
                report.accepted += 1
                lam = max(lam / config.lambda_down, 1e-12)
                accepted = True
                break
            lam *= config.lambda_up
        if not solved:
            raise SingularNormalEquations("normal equations not positive definite at any damping")
        if not accepted or rel < config.rel_tol or cost < config.abs_tol:
            report.converged = True
            break
    report.final_cost = cost
    if config.strict and not report.converged:
        raise NotConverged(f"no convergence within {config.max_iterations} iterations")
    return state, report


# ---------------------------------------------------------------------------
# State construction


def build_state(kfs, s1, s3, velocities, landmarks_vo, gravity=None) -> FullState:
    """Metric window state from an initialization result.

    ``landmarks_vo`` are the up-to-scale landmark positions from the visual
    front end, indexed by landmark id; observations come from ``kfs.frames``.
    """
    R, p = kfs.interpolated(s1.td)
    Rb = R @ s1.r_bc.T
    pb = _mv(R, s3.p_cb) + s3.scale * p
    N = len(kfs)
    obs_kf, obs_lm, obs_uv = [], [], []
    for n, f in enumerate(kfs.frames):
        obs_kf.append(np.full(len(f.ids), n))
        obs_lm.append(np.asarray(f.ids, int))
        obs_uv.append(np.asarray(f.uv, float).reshape(-1, 2))
    pre = kfs.with_bias(s1.bias_gyro, s3.accel_bias).preint
    r_bc = s1.r_bc
    p_bc = -r_bc @ s3.p_cb
    return FullState(
        R=Rb, p=pb, v=np.asarray(velocities, float).copy(), dbg=np.zeros((N, 3)), dba=np.zeros((N, 3)),
        bg_ref=np.tile(s1.bias_gyro, (N, 1)), ba_ref=np.tile(s3.accel_bias, (N, 1)),
        gyro=kfs.gyro_near.copy(), t=kfs.t.copy(),
        obs_kf=np.concatenate(obs_kf) if obs_kf else np.zeros(0, int),
        obs_lm=np.concatenate(obs_lm) if obs_lm else np.zeros(0, int),
        obs_uv=np.concatenate(obs_uv) if obs_uv else np.zeros((0, 2)),
        landmarks=s3.scale * np.asarray(landmarks_vo, float), r_bc=r_bc, p_bc=p_bc, td=float(s1.td),
        preint=pre, gravity=np.asarray(s3.gravity if gravity is None else gravity, float))
