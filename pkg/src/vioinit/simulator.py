"""Synthetic camera + IMU rig on a circular trajectory with vertical oscillation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lie
from .errors import NoVisibleLandmarks, OutOfRange
from .imu import GRAVITY_MAGNITUDE, ImuNoiseSpec, ImuStream
from .temporal import CameraPoseUpToScale, Extrinsics

MIN_VISIBLE = 8


@dataclass(frozen=True)
class TrajectoryConfig:
    radius: float = 3.0
    angular_rate: float = 0.85
    vertical_amplitude: float = 0.4
    vertical_frequency: float = 0.5
    duration: float = 10.0
    roll_amplitude: float = 0.2
    roll_frequency: float = 0.5
    # without pitch the body x axis turns uniformly and an x lever arm is
    # indistinguishable from an accelerometer bias
    pitch_amplitude: float = 0.15
    pitch_frequency: float = 0.7

    def __post_init__(self):
        if self.radius <= 0 or self.duration <= 0:
            raise ValueError("radius and duration must be positive")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 460.0
    fy: float = 460.0
    cx: float = 255.0
    cy: float = 255.0
    width: int = 640
    height: int = 640

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def project(self, pc: np.ndarray) -> np.ndarray:
        pc = np.asarray(pc, float)
        return np.stack([self.fx * pc[..., 0] / pc[..., 2] + self.cx,
                         self.fy * pc[..., 1] / pc[..., 2] + self.cy], axis=-1)

    def inside(self, uv: np.ndarray) -> np.ndarray:
        return ((uv[..., 0] >= 0) & (uv[..., 0] < self.width)
                & (uv[..., 1] >= 0) & (uv[..., 1] < self.height))


def default_extrinsics() -> Extrinsics:
    return Extrinsics(lie.from_ypr(np.pi, 0.0, 0.0), np.array([0.1, 0.04, 0.03]))


@dataclass(frozen=True)
class RigConfig:
    extrinsics: Extrinsics = field(default_factory=default_extrinsics)
    td: float = 0.0
    noise: ImuNoiseSpec = field(default_factory=ImuNoiseSpec)
    bias_gyro: np.ndarray = field(default_factory=lambda: np.array([-0.0023, 0.0249, 0.0817]))
    bias_accel: np.ndarray = field(default_factory=lambda: np.array([-0.0236, 0.1210, 0.0748]))
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    camera_rate: float = 20.0
    max_features: int = 500
    pixel_noise: float = 0.0
    wrong_id_fraction: float = 0.0
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -GRAVITY_MAGNITUDE]))
    n_landmarks: int = 2000
    landmark_layout: str = "auto"

    def __post_init__(self):
        if self.camera_rate <= 0:
            raise ValueError("camera rate must be positive")
        ratio = self.noise.rate / self.camera_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("IMU rate must be an integer multiple of the camera rate")

    @property
    def imu_rate(self) -> float:
        return self.noise.rate


@dataclass
class TrajectoryState:
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    omega_body: np.ndarray
    accel_world: np.ndarray


def analytic_state(cfg: TrajectoryConfig, t, check: bool = True) -> TrajectoryState:
    """Pose and exact derivatives at time(s) ``t``; vectorized over ``t``."""
    t = np.asarray(t, dtype=float)
    if check and (np.any(t < -1e-12) or np.any(t > cfg.duration + 1e-12)):
        raise OutOfRange(f"t outside [0, {cfg.duration}]")
    r, W = cfg.radius, cfg.angular_rate
    A, wz = cfg.vertical_amplitude, 2 * np.pi * cfg.vertical_frequency
    ar, wr = cfg.roll_amplitude, 2 * np.pi * cfg.roll_frequency
    th = W * t
    c, s = np.cos(th), np.sin(th)
    pos = np.stack([r * c, r * s, A * np.sin(wz * t)], axis=-1)
    vel = np.stack([-r * W * s, r * W * c, A * wz * np.cos(wz * t)], axis=-1)
    acc = np.stack([-r * W * W * c, -r * W * W * s, -A * wz * wz * np.sin(wz * t)], axis=-1)

    yaw = th + 0.5 * np.pi
    ap, wp = cfg.pitch_amplitude, 2 * np.pi * cfg.pitch_frequency
    roll = ar * np.sin(wr * t)
    roll_rate = ar * wr * np.cos(wr * t)
    pitch = ap * np.sin(wp * t)
    pitch_rate = ap * wp * np.cos(wp * t)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    # R = Rz(yaw) Ry(pitch) Rx(roll); body rate = roll x + Rx^T pitch y + (Ry Rx)^T yaw z
    R = np.stack([
        np.stack([cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr], -1),
        np.stack([sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr], -1),
        np.stack([-sp, cp * sr, cp * cr], -1),
    ], -2)
    omega = np.stack([roll_rate - W * sp,
                      pitch_rate * cr + W * cp * sr,
                      -pitch_rate * sr + W * cp * cr], axis=-1)
    return TrajectoryState(R, pos, vel, omega, acc)


@dataclass
class CameraFrame:
    pose: CameraPoseUpToScale
    ids: np.ndarray
    uv: np.ndarray
    true_time: float


@dataclass
class Truth:
    extrinsics: Extrinsics
    td: float
    bias_gyro: np.ndarray
    bias_accel: np.ndarray
    gravity: np.ndarray
    scale: float
    bias_gyro_series: np.ndarray
    bias_accel_series: np.ndarray


@dataclass
class SyntheticDataset:
    imu: ImuStream
    frames: list
    landmarks: np.ndarray
    truth: Truth
    trajectory: TrajectoryConfig
    rig: RigConfig

    def truth_state(self, t_imu):
        """Ground-truth body state at IMU stamp(s); stamps equal physical time."""
        return analytic_state(self.trajectory, t_imu, check=False)

    def truth_bias(self, t_imu):
        k = np.clip(np.searchsorted(self.imu.t, t_imu), 0, len(self.imu.t) - 1)
        return self.truth.bias_gyro_series[k], self.truth.bias_accel_series[k]

    @property
    def camera_times(self) -> np.ndarray:
        return np.array([f.pose.timestamp for f in self.frames])


def make_landmarks(traj: TrajectoryConfig, rig: RigConfig, rng: np.random.Generator) -> np.ndarray:
    n = rig.n_landmarks
    layout = rig.landmark_layout
    if layout == "auto":
        st = analytic_state(traj, 0.0)
        axis = st.rotation @ rig.extrinsics.r_bc @ np.array([0.0, 0.0, 1.0])
        if axis[2] > 0.7:
            layout = "ceiling"
        elif axis[2] < -0.7:
            layout = "floor"
        else:
            layout = "cylinder"
    rad = traj.radius
    if layout in ("ceiling", "floor"):
        rr = (rad + 2.5) * np.sqrt(rng.uniform(0.0, 1.0, n))
        ang = rng.uniform(0.0, 2 * np.pi, n)
        h = rng.uniform(2.5, 5.5, n)
        z = h if layout == "ceiling" else -h
        return np.stack([rr * np.cos(ang), rr * np.sin(ang), z], axis=-1)
    if layout == "cylinder":
        ang = rng.uniform(0.0, 2 * np.pi, n)
        return np.stack([6.0 * np.cos(ang), 6.0 * np.sin(ang), rng.uniform(-2.0, 4.0, n)], axis=-1)
    raise ValueError(f"unknown landmark layout {layout!r}")


def frame_times(traj: TrajectoryConfig, rig: RigConfig) -> np.ndarray:
    """Physical capture times whose offset stamps stay inside the IMU coverage."""
    n = int(np.floor(traj.duration * rig.camera_rate + 1e-9)) + 1
    tau = np.arange(n) / rig.camera_rate
    lo, hi = max(0.0, -rig.td), min(traj.duration, traj.duration - rig.td)
    return tau[(tau >= lo - 1e-12) & (tau <= hi + 1e-12)]


def _observe(points, R_wc, p_wc, intr: CameraIntrinsics):
    pc = (points - p_wc) @ R_wc
    front = pc[:, 2] > 0.1
    uv = np.full((len(points), 2), -1.0)
    uv[front] = intr.project(pc[front])
    vis = front & intr.inside(uv)
    return vis, uv


def synthesize(traj: TrajectoryConfig, rig: RigConfig, seed: int = 0,
               max_attempts: int = 5) -> SyntheticDataset:
    rng = np.random.default_rng(seed)
    noise = rig.noise
    dt = 1.0 / noise.rate

    n_imu = int(np.floor(traj.duration * noise.rate + 1e-9)) + 1
    t_imu = np.arange(n_imu) * dt
    st = analytic_state(traj, t_imu)
    bg = np.empty((n_imu, 3))
    ba = np.empty((n_imu, 3))
    steps_g = rng.standard_normal((n_imu, 3)) * noise.gyro_walk * np.sqrt(dt)
    steps_a = rng.standard_normal((n_imu, 3)) * noise.accel_walk * np.sqrt(dt)
    steps_g[0] = 0.0
    steps_a[0] = 0.0
    bg[:] = np.asarray(rig.bias_gyro, float) + np.cumsum(steps_g, axis=0)
    ba[:] = np.asarray(rig.bias_accel, float) + np.cumsum(steps_a, axis=0)
    eta_g = rng.standard_normal((n_imu, 3)) * noise.gyro_density / np.sqrt(dt)
    eta_a = rng.standard_normal((n_imu, 3)) * noise.accel_density / np.sqrt(dt)
    gyro = st.omega_body + bg + eta_g
    spec = np.einsum("nji,nj->ni", st.rotation, st.accel_world - rig.gravity)
    accel = spec + ba + eta_a
    imu = ImuStream(t_imu, gyro, accel)

    tau = frame_times(traj, rig)
    cam = analytic_state(traj, tau)
    ex = rig.extrinsics
    R_wc = cam.rotation @ ex.r_bc
    p_wc = cam.position + cam.rotation @ ex.p_bc

    for attempt in range(max_attempts):
        lm_rng = np.random.default_rng([seed, attempt])
        landmarks = make_landmarks(traj, rig, lm_rng)
        frames = []
        ok = True
        for k in range(len(tau)):
            vis, uv = _observe(landmarks, R_wc[k], p_wc[k], rig.intrinsics)
            ids = np.flatnonzero(vis)
            if len(ids) < MIN_VISIBLE:
                ok = False
                break
            if len(ids) > rig.max_features:
                ids = np.sort(rng.choice(ids, rig.max_features, replace=False))
            obs = uv[ids]
            if rig.pixel_noise > 0:
                obs = obs + rng.standard_normal(obs.shape) * rig.pixel_noise
            if rig.wrong_id_fraction > 0:
                swap = rng.uniform(size=len(ids)) < rig.wrong_id_fraction
                ids = ids.copy()
                ids[swap] = rng.integers(0, len(landmarks), swap.sum())
            pose = CameraPoseUpToScale(R_wc[k], p_wc[k].copy(), float(tau[k] + rig.td))
            frames.append(CameraFrame(pose, ids, obs, float(tau[k])))
        if ok:
            break
    else:
        raise NoVisibleLandmarks(f"some frame sees fewer than {MIN_VISIBLE} landmarks")

    truth = Truth(ex, float(rig.td), np.asarray(rig.bias_gyro, float).copy(),
                  np.asarray(rig.bias_accel, float).copy(), np.asarray(rig.gravity, float).copy(),
                  1.0, bg, ba)
    return SyntheticDataset(imu, frames, landmarks, truth, traj, rig)


def to_up_to_scale(ds: SyntheticDataset, s: float) -> SyntheticDataset:
    """Divide visual positions by ``s``; the initializer should then recover ``s``."""
    if s <= 0:
        raise ValueError("scale must be positive")
    frames = [
        CameraFrame(CameraPoseUpToScale(f.pose.rotation, f.pose.position / s, f.pose.timestamp),
                    f.ids, f.uv, f.true_time)
        for f in ds.frames
    ]
    truth = dataclasses.replace(ds.truth, scale=ds.truth.scale * s)
    return dataclasses.replace(ds, frames=frames, landmarks=ds.landmarks / s, truth=truth)


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_dataset(ds: SyntheticDataset, out_dir) -> tuple[Path, Path]:
    """Write ``imu.csv`` and ``camera.csv`` (see README for the record layout)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    imu_path = out / "imu.csv"
    cam_path = out / "camera.csv"
    with open(imu_path, "w", encoding="utf-8") as fh:
        for t, g, a in zip(ds.imu.t, ds.imu.gyro, ds.imu.accel):
            fh.write(", ".join(_fmt(x) for x in (t, *g, *a)) + "\n")
    with open(cam_path, "w", encoding="utf-8") as fh:
        for f in ds.frames:
            vals = [f.pose.timestamp, *f.pose.position, *f.pose.rotation.ravel()]
            head = ", ".join(_fmt(x) for x in vals)
            obs = " ".join(f"{int(i)}:{_fmt(u)}:{_fmt(v)}" for i, (u, v) in zip(f.ids, f.uv))
            fh.write(f"{head}, {obs}\n" if obs else head + "\n")
    return imu_path, cam_path


def load_imu(path) -> ImuStream:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return ImuStream(data[:, 0], data[:, 1:4], data[:, 4:7])


def load_camera(path) -> list:
    frames = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = [p.strip() for p in line.strip().split(",")]
            vals = [float(x) for x in parts[:13]]
            ids, uv = [], []
            if len(parts) > 13 and parts[13]:
                for tok in parts[13].split():
                    i, u, v = tok.split(":")
                    ids.append(int(i))
                    uv.append((float(u), float(v)))
            pose = CameraPoseUpToScale(np.array(vals[4:13]).reshape(3, 3), np.array(vals[1:4]), vals[0])
            frames.append(CameraFrame(pose, np.array(ids, dtype=int),
                                      np.array(uv).reshape(-1, 2), float("nan")))
    return frames
