import dataclasses

import numpy as np
import pytest

from vioinit import lie
from vioinit.errors import OutOfRange
from vioinit.imu import ImuNoiseSpec, integrate_held, preintegrate_windows, propagate
from vioinit.simulator import (RigConfig, TrajectoryConfig, analytic_state, dump_dataset, load_camera,
                               load_imu, synthesize, to_up_to_scale)

TRAJ = TrajectoryConfig()


def clean_rig(**kw):
    base = dict(noise=ImuNoiseSpec.zero(), bias_gyro=np.zeros(3), bias_accel=np.zeros(3))
    base.update(kw)
    return RigConfig(**base)


def test_phase_convention():
    np.testing.assert_allclose(analytic_state(TRAJ, 0.0).position, [3.0, 0.0, 0.0], atol=1e-15)
    with pytest.raises(OutOfRange):
        analytic_state(TRAJ, TRAJ.duration + 1.0)


def test_derivatives_match_finite_differences():
    h = 1e-6
    for t in np.linspace(0.1, 9.9, 25):
        s0, s1, sm = (analytic_state(TRAJ, x) for x in (t - h, t + h, t))
        v_fd = (s1.position - s0.position) / (2 * h)
        a_fd = (s1.velocity - s0.velocity) / (2 * h)
        w_fd = lie.log_so3(s0.rotation.T @ s1.rotation) / (2 * h)
        assert np.linalg.norm(v_fd - sm.velocity) < 1e-6 * np.linalg.norm(sm.velocity)
        assert np.linalg.norm(a_fd - sm.accel_world) < 1e-6 * np.linalg.norm(sm.accel_world)
        assert np.linalg.norm(w_fd - sm.omega_body) < 1e-6 * np.linalg.norm(sm.omega_body)


def test_flat_circle_has_constant_speed():
    cfg = dataclasses.replace(TRAJ, vertical_amplitude=0.0)
    v = analytic_state(cfg, np.linspace(0, 10, 101)).velocity
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), cfg.radius * cfg.angular_rate, rtol=1e-12)


def test_rotation_about_two_axes():
    w = analytic_state(TRAJ, np.linspace(0, 10, 201)).omega_body
    assert np.sum(w.std(axis=0) > 0.05) >= 2


def test_offset_stamps():
    ds = synthesize(TRAJ, clean_rig(td=0.05), 0)
    for f in ds.frames:
        assert abs(f.pose.timestamp - f.true_time - 0.05) < 1e-12
        # the camera sees the body at the IMU stamp equal to the physical time
        st = ds.truth_state(f.true_time)
        np.testing.assert_allclose(f.pose.rotation, st.rotation @ ds.truth.extrinsics.r_bc, atol=1e-12)


def test_pixels_inside_image_and_capped():
    rig = clean_rig(pixel_noise=0.0, max_features=120)
    ds = synthesize(TRAJ, rig, 3)
    intr = rig.intrinsics
    for f in ds.frames:
        assert len(f.ids) <= 120
        assert np.all((f.uv[:, 0] >= 0) & (f.uv[:, 0] < intr.width))
        assert np.all((f.uv[:, 1] >= 0) & (f.uv[:, 1] < intr.height))


def test_pixels_are_projections():
    ds = synthesize(TRAJ, clean_rig(), 1)
    f = ds.frames[17]
    pc = (ds.landmarks[f.ids] - f.pose.position) @ f.pose.rotation
    np.testing.assert_allclose(ds.rig.intrinsics.project(pc), f.uv, atol=1e-9)


def test_determinism(tmp_path):
    rig = RigConfig(pixel_noise=0.5)
    a = dump_dataset(synthesize(TRAJ, rig, 7), tmp_path / "a")
    b = dump_dataset(synthesize(TRAJ, rig, 7), tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


def test_noise_free_measurements_invert():
    rig = clean_rig()
    ds = synthesize(TRAJ, rig, 0)
    st = ds.truth_state(ds.imu.t)
    np.testing.assert_allclose(ds.imu.gyro, st.omega_body, atol=1e-12)
    acc = np.einsum("nij,nj->ni", st.rotation, ds.imu.accel) + rig.gravity
    np.testing.assert_allclose(acc, st.accel_world, atol=1e-12)


def _propagation_error(rate):
    rig = clean_rig(noise=ImuNoiseSpec.zero(rate))
    ds = synthesize(TRAJ, rig, 0)
    t = ds.camera_times
    pre = preintegrate_windows(ds.imu, t, np.zeros(3), np.zeros(3), rig.noise, with_covariance=False)
    st = ds.truth_state(t)
    worst = 0.0
    for s in range(len(t) - 1):
        R, p, v = propagate(st.rotation[s], st.position[s], st.velocity[s], pre[s], rig.gravity)
        worst = max(worst, np.linalg.norm(p - st.position[s + 1]), np.linalg.norm(v - st.velocity[s + 1]),
                    lie.angle_between(R, st.rotation[s + 1]))
    return worst


def test_propagation_reproduces_truth():
    # held samples on a continuous trajectory leave an O(dt^2) discretization error
    e200, e1000 = _propagation_error(200.0), _propagation_error(1000.0)
    assert e200 < 2e-5
    assert e200 / e1000 > 15


@pytest.mark.parametrize("rate", [200.0, 400.0])
def test_empirical_covariance_matches_propagated(rate):
    rng = np.random.default_rng(5)
    noise = ImuNoiseSpec(gyro_density=0.01, accel_density=0.05, rate=rate)
    n_runs, K = 1000, int(0.1 * rate)
    dt = 1.0 / rate
    w = np.tile([0.3, -0.5, 0.8], (K, 1))
    a = np.tile([0.5, 0.2, 9.81], (K, 1))
    dts = np.full((1, K), dt)
    ref = integrate_held(w[None], a[None], dts, np.zeros(3), np.zeros(3), noise)
    gy = w + rng.standard_normal((n_runs, K, 3)) * noise.gyro_density / np.sqrt(dt)
    ac = a + rng.standard_normal((n_runs, K, 3)) * noise.accel_density / np.sqrt(dt)
    out = integrate_held(gy, ac, np.repeat(dts, n_runs, 0), np.zeros(3), np.zeros(3), noise,
                         with_covariance=False)
    err = np.concatenate([lie.log_so3(np.swapaxes(ref.dR, -1, -2) @ out.dR), out.dv - ref.dv,
                          out.dp - ref.dp], axis=1)
    emp = np.cov(err.T)
    prop = ref.cov_preint[0]
    d_emp, d_prop = np.diag(emp), np.diag(prop)
    np.testing.assert_allclose(d_emp, d_prop, rtol=0.15)


def test_to_up_to_scale():
    ds = synthesize(TRAJ, clean_rig(), 0)
    same = to_up_to_scale(ds, 1.0)
    np.testing.assert_array_equal(same.frames[5].pose.position, ds.frames[5].pose.position)
    half = to_up_to_scale(ds, 2.0)
    assert half.truth.scale == 2.0
    for f, g in zip(ds.frames, half.frames):
        np.testing.assert_array_equal(f.pose.rotation, g.pose.rotation)
        np.testing.assert_allclose(g.pose.position, f.pose.position / 2)
    np.testing.assert_allclose(half.landmarks, ds.landmarks / 2)
    with pytest.raises(ValueError):
        to_up_to_scale(ds, 0.0)


def test_dump_roundtrip(tmp_path):
    ds = synthesize(TRAJ, RigConfig(pixel_noise=1.0), 2)
    imu_path, cam_path = dump_dataset(ds, tmp_path)
    imu = load_imu(imu_path)
    np.testing.assert_array_equal(imu.t, ds.imu.t)
    np.testing.assert_array_equal(imu.accel, ds.imu.accel)
    frames = load_camera(cam_path)
    assert len(frames) == len(ds.frames)
    np.testing.assert_array_equal(frames[3].pose.rotation, ds.frames[3].pose.rotation)
    np.testing.assert_array_equal(frames[3].ids, ds.frames[3].ids)
    np.testing.assert_array_equal(frames[3].uv, ds.frames[3].uv)


def test_rate_must_divide():
    with pytest.raises(ValueError):
        RigConfig(camera_rate=30.0)
