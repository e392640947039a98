"""IMU samples, measurement model and keyframe-to-keyframe preintegration."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lie
from .errors import EmptyStream, NonMonotonicTimestamps

GRAVITY_MAGNITUDE = 9.81


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class ImuBias:
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __add__(self, other: "ImuBias") -> "ImuBias":
        return ImuBias(np.asarray(self.gyro) + other.gyro, np.asarray(self.accel) + other.accel)


@dataclass(frozen=True)
class ImuNoiseSpec:
    """Continuous-time densities and the sampling rate."""

    gyro_density: float = 0.00017  # rad/(s sqrt(Hz))
    accel_density: float = 0.002  # m/(s^2 sqrt(Hz))
    gyro_walk: float = 0.00002  # rad/(s^2 sqrt(Hz))
    accel_walk: float = 0.003  # m/(s^3 sqrt(Hz))
    rate: float = 200.0

    def __post_init__(self):
        vals = (self.gyro_density, self.accel_density, self.gyro_walk, self.accel_walk)
        if min(vals) < 0 or self.rate <= 0:
            raise ValueError("noise densities must be >= 0 and rate > 0")

    @property
    def period(self) -> float:
        return 1.0 / self.rate

    @classmethod
    def zero(cls, rate: float = 200.0) -> "ImuNoiseSpec":
        return cls(0.0, 0.0, 0.0, 0.0, rate)


@dataclass
class ImuStream:
    """Column storage for a stream of samples; the form the pipeline works with."""

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if len(self.t) == 0:
            raise EmptyStream("IMU stream is empty")
        if np.any(np.diff(self.t) <= 0):
            raise NonMonotonicTimestamps("IMU timestamps must be strictly increasing")

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> "ImuStream":
        if len(samples) == 0:
            raise EmptyStream("IMU stream is empty")
        return cls(
            np.array([s.timestamp for s in samples]),
            np.array([s.gyro for s in samples]),
            np.array([s.accel for s in samples]),
        )

    def __len__(self):
        return len(self.t)

    def samples(self) -> list[ImuSample]:
        return [ImuSample(float(t), g, a) for t, g, a in zip(self.t, self.gyro, self.accel)]

    def nearest_gyro(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.t - t)))
        return self.gyro[k]


def imu_measure(true_omega, true_accel_world, attitude, gravity, bias: ImuBias,
                noise_draw=(np.zeros(3), np.zeros(3))):
    """Ideal sensor output plus bias and the given white-noise draws.

    Returns ``(gyro, accel)``; ``accel`` is the specific force in the body frame.
    """
    eta_g, eta_a = noise_draw
    gyro = np.asarray(true_omega, float) + bias.gyro + eta_g
    accel = np.swapaxes(attitude, -1, -2) @ (np.asarray(true_accel_world) - gravity)[..., None]
    accel = accel[..., 0] + bias.accel + eta_a
    return gyro, accel


def hold_intervals(t: np.ndarray, hold: str = "centered", period: float | None = None):
    """Start/end of the interval each sample is held over.

    ``forward`` holds sample k over [t_k, t_{k+1}); ``centered`` over the span
    between the midpoints to its neighbours. Stream ends are padded with the
    adjacent spacing, or ``period`` for a single sample.
    """
    t = np.asarray(t, dtype=float)
    n = len(t)
    if n == 0:
        raise EmptyStream("no samples")
    if n == 1:
        if period is None:
            raise ValueError("a single sample needs an explicit period")
        gaps = np.array([period])
    else:
        gaps = np.diff(t)
    if np.any(gaps <= 0):
        raise NonMonotonicTimestamps("timestamps must be strictly increasing")
    if hold == "forward":
        start = t.copy()
        end = np.append(t[1:], t[-1] + gaps[-1])
    elif hold == "centered":
        mids = 0.5 * (t[1:] + t[:-1])
        start = np.concatenate([[t[0] - 0.5 * gaps[0]], mids])
        end = np.concatenate([mids, [t[-1] + 0.5 * gaps[-1]]])
    else:
        raise ValueError(f"unknown hold mode {hold!r}")
    return start, end


def segment_slices(t: np.ndarray, bounds: np.ndarray, hold: str = "centered",
                   period: float | None = None):
    """Sample indices and clipped durations for consecutive windows.

    ``bounds`` holds the window edges [b0, b1, ..., bm]; the result is two
    ``(m, K)`` arrays padded with index 0 and duration 0.
    """
    start, end = hold_intervals(t, hold, period)
    bounds = np.asarray(bounds, dtype=float)
    idx_list, dt_list = [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        k0 = max(int(np.searchsorted(end, a, side="right")), 0)
        k1 = int(np.searchsorted(start, b, side="left"))
        ks = np.arange(k0, k1)
        d = np.minimum(end[ks], b) - np.maximum(start[ks], a)
        keep = d > 0
        idx_list.append(ks[keep])
        dt_list.append(d[keep])
    width = max(1, max(len(i) for i in idx_list))
    idx = np.zeros((len(idx_list), width), dtype=int)
    dts = np.zeros((len(idx_list), width))
    for s, (i, d) in enumerate(zip(idx_list, dt_list)):
        idx[s, : len(i)] = i
        dts[s, : len(d)] = d
    return idx, dts


@dataclass
class PreintegratedImu:
    dR: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    dt_ij: float
    jg_dR: np.ndarray
    jg_dv: np.ndarray
    ja_dv: np.ndarray
    jg_dp: np.ndarray
    ja_dp: np.ndarray
    bias_ref: ImuBias
    cov_preint: np.ndarray
    cov_walk: np.ndarray

    @property
    def info_preint(self) -> np.ndarray:
        return _safe_inverse(self.cov_preint)

    @property
    def info_walk(self) -> np.ndarray:
        return _safe_inverse(self.cov_walk)


def _safe_inverse(cov: np.ndarray) -> np.ndarray:
    # Zero-noise segments have no meaningful information; weight them uniformly.
    w = np.linalg.eigvalsh(cov)
    if w[0] <= 1e-14 * max(w[-1], 1e-300) or w[-1] <= 0:
        return np.eye(cov.shape[0])
    inv = np.linalg.inv(cov)
    return 0.5 * (inv + inv.T)


@dataclass
class PreintegratedBatch:
    """Many segments integrated together; field shapes carry a leading segment axis."""

    dR: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    dt_ij: np.ndarray
    jg_dR: np.ndarray
    jg_dv: np.ndarray
    ja_dv: np.ndarray
    jg_dp: np.ndarray
    ja_dp: np.ndarray
    bias_gyro: np.ndarray
    bias_accel: np.ndarray
    cov_preint: np.ndarray
    cov_walk: np.ndarray

    def __len__(self):
        return len(self.dt_ij)

    def __getitem__(self, s: int) -> PreintegratedImu:
        return PreintegratedImu(
            dR=self.dR[s], dv=self.dv[s], dp=self.dp[s], dt_ij=float(self.dt_ij[s]),
            jg_dR=self.jg_dR[s], jg_dv=self.jg_dv[s], ja_dv=self.ja_dv[s],
            jg_dp=self.jg_dp[s], ja_dp=self.ja_dp[s],
            bias_ref=ImuBias(self.bias_gyro[s].copy(), self.bias_accel[s].copy()),
            cov_preint=self.cov_preint[s], cov_walk=self.cov_walk[s],
        )

    def __iter__(self):
        return (self[s] for s in range(len(self)))

    def corrected(self, delta_bg, delta_ba=None):
        """Batched first-order bias correction; see :func:`bias_corrected_terms`."""
        delta_bg = np.broadcast_to(np.asarray(delta_bg, float), self.dv.shape)
        delta_ba = np.zeros_like(delta_bg) if delta_ba is None else np.broadcast_to(
            np.asarray(delta_ba, float), self.dv.shape)
        dR = self.dR @ lie.exp_so3(_mv(self.jg_dR, delta_bg))
        dv = self.dv + _mv(self.jg_dv, delta_bg) + _mv(self.ja_dv, delta_ba)
        dp = self.dp + _mv(self.jg_dp, delta_bg) + _mv(self.ja_dp, delta_ba)
        return dR, dv, dp


def _mv(m, v):
    return np.einsum("...ij,...j->...i", m, v)


ATTITUDE_FRACTION = {"start": 0.0, "mid": 0.5}


def integrate_held(gyro, accel, dts, bias_gyro, bias_accel, noise: ImuNoiseSpec,
                   with_covariance: bool = True, attitude: str = "mid") -> PreintegratedBatch:
    """Integrate held measurements for a batch of segments.

    ``gyro``/``accel`` are ``(S, K, 3)``, ``dts`` is ``(S, K)``; zero durations
    are padding and leave the integrals untouched. ``attitude`` picks where in
    its hold interval each accelerometer sample is rotated into the segment
    frame: ``start`` (plain zero-order hold) or ``mid``.
    """
    if attitude not in ATTITUDE_FRACTION:
        raise ValueError(f"unknown attitude mode {attitude!r}")
    c = ATTITUDE_FRACTION[attitude]
    gyro = np.asarray(gyro, float)
    accel = np.asarray(accel, float)
    dts = np.asarray(dts, float)
    S, K = dts.shape
    bg = np.broadcast_to(np.asarray(bias_gyro, float), (S, 3)).copy()
    ba = np.broadcast_to(np.asarray(bias_accel, float), (S, 3)).copy()

    w = gyro - bg[:, None, :]
    a = accel - ba[:, None, :]
    step = w * dts[..., None]
    dRk = lie.exp_so3(step)
    Jr = lie.right_jacobian(step)
    half = lie.exp_so3(c * step)
    half_T = np.swapaxes(half, -1, -2)
    Jh = lie.right_jacobian(c * step)
    a_hat = lie.hat(a)

    eye = np.eye(3)
    dR = np.broadcast_to(eye, (S, 3, 3)).copy()
    dv = np.zeros((S, 3))
    dp = np.zeros((S, 3))
    jg_dR = np.zeros((S, 3, 3))
    jg_dv = np.zeros((S, 3, 3))
    ja_dv = np.zeros((S, 3, 3))
    jg_dp = np.zeros((S, 3, 3))
    ja_dp = np.zeros((S, 3, 3))
    cov = np.zeros((S, 9, 9))
    sg2 = noise.gyro_density ** 2
    sa2 = noise.accel_density ** 2

    for k in range(K):
        dt = dts[:, k]
        dt_ = dt[:, None]
        dt3 = dt[:, None, None]
        M = dR @ half[:, k]
        Ma = _mv(M, a[:, k])
        M_ahat = M @ a_hat[:, k]
        # sensitivity of the rotated sample to the gyro bias
        dMa_dbg = -M_ahat @ (half_T[:, k] @ jg_dR - c * Jh[:, k] * dt3)

        if with_covariance:
            A = np.broadcast_to(np.eye(9), (S, 9, 9)).copy()
            A[:, 0:3, 0:3] = np.swapaxes(dRk[:, k], -1, -2)
            A[:, 3:6, 0:3] = -M_ahat @ half_T[:, k] * dt3
            A[:, 6:9, 0:3] = -0.5 * M_ahat @ half_T[:, k] * dt3 ** 2
            A[:, 6:9, 3:6] = eye * dt3
            Q = np.zeros((S, 9, 9))
            Q[:, 0:3, 0:3] = sg2 * (Jr[:, k] @ np.swapaxes(Jr[:, k], -1, -2)) * dt3
            Q[:, 3:6, 3:6] = sa2 * eye * dt3
            Q[:, 3:6, 6:9] = sa2 * 0.5 * eye * dt3 ** 2
            Q[:, 6:9, 3:6] = sa2 * 0.5 * eye * dt3 ** 2
            Q[:, 6:9, 6:9] = sa2 * 0.25 * eye * dt3 ** 3
            cov = A @ cov @ np.swapaxes(A, -1, -2) + Q

        dp = dp + dv * dt_ + 0.5 * Ma * dt_ ** 2
        dv = dv + Ma * dt_
        jg_dp = jg_dp + jg_dv * dt3 + 0.5 * dMa_dbg * dt3 ** 2
        ja_dp = ja_dp + ja_dv * dt3 - 0.5 * M * dt3 ** 2
        jg_dv = jg_dv + dMa_dbg * dt3
        ja_dv = ja_dv - M * dt3
        jg_dR = np.swapaxes(dRk[:, k], -1, -2) @ jg_dR - Jr[:, k] * dt3
        dR = dR @ dRk[:, k]

    dR = lie.renormalize(dR)
    dt_ij = dts.sum(axis=1)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    cov_walk = np.zeros((S, 6, 6))
    cov_walk[:, 0:3, 0:3] = noise.gyro_walk ** 2 * eye * dt_ij[:, None, None]
    cov_walk[:, 3:6, 3:6] = noise.accel_walk ** 2 * eye * dt_ij[:, None, None]
    return PreintegratedBatch(dR, dv, dp, dt_ij, jg_dR, jg_dv, ja_dv, jg_dp, ja_dp,
                              bg, ba, cov, cov_walk)


def preintegrate_windows(stream: ImuStream, bounds, bias_gyro, bias_accel, noise: ImuNoiseSpec,
                         hold: str = "centered", with_covariance: bool = True,
                         attitude: str = "mid") -> PreintegratedBatch:
    """Preintegrate the stream between each pair of consecutive timestamps in ``bounds``."""
    bounds = np.asarray(bounds, dtype=float)
    if np.any(np.diff(bounds) <= 0):
        raise NonMonotonicTimestamps("window bounds must be strictly increasing")
    idx, dts = segment_slices(stream.t, bounds, hold, noise.period)
    S = len(bounds) - 1
    bg = np.broadcast_to(np.asarray(bias_gyro, float), (S, 3))
    ba = np.broadcast_to(np.asarray(bias_accel, float), (S, 3))
    return integrate_held(stream.gyro[idx], stream.accel[idx], dts, bg, ba, noise, with_covariance,
                          attitude)


def preintegrate(samples, bias_ref: ImuBias, noise: ImuNoiseSpec, t_start: float | None = None,
                 t_end: float | None = None, hold: str = "centered",
                 attitude: str = "mid") -> PreintegratedImu:
    """Preintegrate one ordered run of samples.

    Without explicit bounds the segment spans the full hold intervals of the
    first and last sample.
    """
    stream = samples if isinstance(samples, ImuStream) else ImuStream.from_samples(list(samples))
    start, end = hold_intervals(stream.t, hold, noise.period)
    a = start[0] if t_start is None else t_start
    b = end[-1] if t_end is None else t_end
    batch = preintegrate_windows(stream, [a, b], bias_ref.gyro, bias_ref.accel, noise, hold,
                                 attitude=attitude)
    return batch[0]


def bias_corrected_terms(p: PreintegratedImu, delta_bg, delta_ba):
    """First-order update of (dR, dv, dp) for a small change of the bias estimate."""
    delta_bg = np.asarray(delta_bg, float)
    delta_ba = np.asarray(delta_ba, float)
    dR = p.dR @ lie.exp_so3(p.jg_dR @ delta_bg)
    dv = p.dv + p.jg_dv @ delta_bg + p.ja_dv @ delta_ba
    dp = p.dp + p.jg_dp @ delta_bg + p.ja_dp @ delta_ba
    return dR, dv, dp


def propagate(R_i, p_i, v_i, p: PreintegratedImu, gravity, delta_bg=np.zeros(3),
              delta_ba=np.zeros(3)):
    """State at the end of a segment given the state at its start."""
    dR, dv, dp = bias_corrected_terms(p, delta_bg, delta_ba)
    T = p.dt_ij
    R_j = R_i @ dR
    v_j = v_i + gravity * T + R_i @ dv
    p_j = p_i + v_i * T + 0.5 * gravity * T * T + R_i @ dp
    return R_j, p_j, v_j

