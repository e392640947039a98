"""Shared builders for simulator-backed tests."""
import numpy as np
from scipy.spatial.transform import Rotation

from vioinit.imu import ImuNoiseSpec, ImuStream
from vioinit.initializer import build_keyframes
from vioinit.simulator import RigConfig, TrajectoryConfig, synthesize, to_up_to_scale

FOOT_BG = np.array([-0.0023, 0.0249, 0.0817])
FOOT_BA = np.array([-0.0236, 0.1210, 0.0748])


def clean_rig(**kw):
    base = dict(noise=ImuNoiseSpec.zero(), bias_gyro=np.zeros(3), bias_accel=np.zeros(3))
    base.update(kw)
    return RigConfig(**base)


def dataset(rig=None, seed=0, scale=1.0, traj=None):
    ds = synthesize(traj or TrajectoryConfig(), rig or clean_rig(), seed)
    return to_up_to_scale(ds, scale) if scale != 1.0 else ds


def keyframes(ds, step=1, count=0, bias_gyro=np.zeros(3), offset_applied=0.0):
    frames = ds.frames[::step]
    if count:
        frames = frames[:count]
    return build_keyframes(frames, ds.imu, ds.rig.noise, bias_gyro, offset_applied=offset_applied)


def consistent_keyframes(ds, step=2, count=0, scale=1.0, bias_gyro=None, bias_accel=None):
    """Keyframes whose camera poses come from integrating the dataset's own IMU samples.

    The body state is chained through the preintegrated windows from the true
    state at the first keyframe, so at zero offset the true calibration fits
    the rotation and linear systems exactly.
    """
    from vioinit import lie
    from vioinit.imu import preintegrate_windows, propagate
    from vioinit.temporal import CameraPoseUpToScale

    frames = ds.frames[::step]
    if count:
        frames = frames[:count]
    t = np.array([f.pose.timestamp for f in frames])
    bg = ds.truth.bias_gyro if bias_gyro is None else bias_gyro
    ba = ds.truth.bias_accel if bias_accel is None else bias_accel
    pre = preintegrate_windows(ds.imu, t, bg, ba, ds.rig.noise, with_covariance=False)
    st = ds.truth_state(t[0])
    R, p, v = st.rotation, st.position, st.velocity
    ex = ds.truth.extrinsics
    poses = []
    for k in range(len(t)):
        poses.append(CameraPoseUpToScale(lie.renormalize(R @ ex.r_bc), (R @ ex.p_bc + p) / scale, float(t[k])))
        if k < len(t) - 1:
            R, p, v = propagate(R, p, v, pre[k], ds.truth.gravity)
    return build_keyframes(poses, ds.imu, ds.rig.noise, np.zeros(3))


def exact_state(n_kf=25, step=2, per_frame=40, td=0.0, seed=0, noise=None):
    """Window state with zero residuals: propagated body states and pixels projected from them.

    Only exact at ``td = 0``; with a nonzero offset the pixels are generated
    through the same constant-rate model the estimator uses.
    """
    from vioinit import estimator as est
    from vioinit.imu import ImuNoiseSpec, preintegrate_windows, propagate

    rig = clean_rig(bias_gyro=FOOT_BG, bias_accel=FOOT_BA)
    ds = dataset(rig, seed=seed)
    noise = noise or ImuNoiseSpec()
    t = np.array([f.pose.timestamp for f in ds.frames[1::step][:n_kf]])
    pre = preintegrate_windows(ds.imu, t, FOOT_BG, FOOT_BA, noise)
    st = ds.truth_state(t[0])
    R, p, v = [st.rotation], [st.position], [st.velocity]
    for k in range(len(t) - 1):
        Rn, pn, vn = propagate(R[-1], p[-1], v[-1], pre[k], ds.truth.gravity)
        R.append(Rn)
        p.append(pn)
        v.append(vn)
    R, p, v = np.array(R), np.array(p), np.array(v)
    near = np.clip(np.searchsorted(ds.imu.t, t), 0, len(ds.imu.t) - 1)
    N = len(t)
    z = np.zeros((N, 3))
    ex = ds.truth.extrinsics
    base = est.FullState(R=R, p=p, v=v, dbg=z, dba=z.copy(), bg_ref=np.tile(FOOT_BG, (N, 1)),
                         ba_ref=np.tile(FOOT_BA, (N, 1)), gyro=ds.imu.gyro[near], t=t,
                         obs_kf=np.zeros(0, int), obs_lm=np.zeros(0, int), obs_uv=np.zeros((0, 2)),
                         landmarks=ds.landmarks, r_bc=ex.r_bc, p_bc=ex.p_bc, td=td, preint=pre,
                         gravity=ds.truth.gravity)
    rng = np.random.default_rng(seed)
    intr = rig.intrinsics
    kf, lm, uv = [], [], []
    for i in range(N):
        pc = np.array([est.transform_point_to_camera(base, i, k) for k in range(len(ds.landmarks))])
        ok = pc[:, 2] > 0.5
        pix = np.full((len(pc), 2), -1.0)
        pix[ok] = intr.project(pc[ok])
        ids = np.flatnonzero(ok & intr.inside(pix))
        ids = np.sort(rng.choice(ids, min(per_frame, len(ids)), replace=False))
        kf.append(np.full(len(ids), i))
        lm.append(ids)
        uv.append(pix[ids])
    used = np.unique(np.concatenate(lm))
    remap = -np.ones(len(ds.landmarks), int)
    remap[used] = np.arange(len(used))
    import dataclasses
    return dataclasses.replace(base, obs_kf=np.concatenate(kf), obs_lm=remap[np.concatenate(lm)],
                               obs_uv=np.concatenate(uv), landmarks=ds.landmarks[used].copy()), ds


def rotvec_exp(v):
    return Rotation.from_rotvec(v).as_matrix()


def direct_integration(gyro, accel, dts, bg, ba, frac):
    """Per-sample loop; each accelerometer sample is rotated with the attitude ``frac`` into its interval."""
    R, v, p = np.eye(3), np.zeros(3), np.zeros(3)
    for w, a, dt in zip(gyro, accel, dts):
        step = (w - bg) * dt
        acc = R @ rotvec_exp(frac * step) @ (a - ba)
        p = p + v * dt + 0.5 * acc * dt * dt
        v = v + acc * dt
        R = R @ rotvec_exp(step)
    return R, v, p


def random_segment(rng, n=None):
    n = n or int(rng.integers(2, 40))
    t = np.cumsum(rng.uniform(0.003, 0.007, n))
    gyro = rng.normal(0.0, 1.0, (n, 3))
    accel = rng.normal(0.0, 3.0, (n, 3))
    return ImuStream(t, gyro, accel)
