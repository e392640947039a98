import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vioinit import lie
from vioinit.errors import DegenerateInterval, OffsetOutOfRange
from vioinit.simulator import TrajectoryConfig, analytic_state, default_extrinsics
from vioinit.temporal import (CameraPoseUpToScale, CameraTwist, Extrinsics, ImuState, camera_from_imu,
                              camera_twist, imu_from_camera, interpolate_camera, interpolate_imu)


def twist_motion(t, R0, p0, w, v):
    """Constant body angular velocity and constant world velocity."""
    return R0 @ lie.exp_so3(w * t), p0 + v * t


@pytest.fixture
def motion(rng):
    return lie.exp_so3(rng.normal(size=3)), rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)


def test_camera_twist_examples():
    a = CameraPoseUpToScale(np.eye(3), np.zeros(3), 0.0)
    tw = camera_twist(a, CameraPoseUpToScale(np.eye(3), np.zeros(3), 0.05))
    np.testing.assert_array_equal(tw.omega, np.zeros(3))
    np.testing.assert_array_equal(tw.v_tilde, np.zeros(3))
    b = CameraPoseUpToScale(lie.exp_so3([0, 0, 0.1]), np.zeros(3), 0.1)
    np.testing.assert_allclose(camera_twist(a, b).omega, [0, 0, 1.0], atol=1e-12)
    with pytest.raises(DegenerateInterval):
        camera_twist(a, CameraPoseUpToScale(np.eye(3), np.zeros(3), 1e-8))


def test_camera_twist_analytic_trajectory():
    cfg = TrajectoryConfig()
    errs = []
    for dt in (0.05, 0.025):
        t0 = 1.0
        s = analytic_state(cfg, [t0, t0 + dt])
        a = CameraPoseUpToScale(s.rotation[0], s.position[0], t0)
        b = CameraPoseUpToScale(s.rotation[1], s.position[1], t0 + dt)
        mid = analytic_state(cfg, t0 + dt / 2)
        errs.append(np.linalg.norm(camera_twist(a, b).omega - mid.omega_body))
    # central-difference error shrinks quadratically with the interval
    assert errs[1] < errs[0] / 3


def test_interpolate_camera(motion):
    R0, p0, w, v = motion
    a = CameraPoseUpToScale(R0, p0, 2.0)
    tw = CameraTwist(w, v)
    same = interpolate_camera(a, tw, 0.0)
    np.testing.assert_array_equal(same.rotation, R0)
    np.testing.assert_array_equal(same.position, p0)
    moved = interpolate_camera(a, tw, 0.05)
    R, p = twist_motion(0.05, R0, p0, w, v)
    np.testing.assert_allclose(moved.rotation, R, atol=1e-9)
    np.testing.assert_allclose(moved.position, p, atol=1e-9)
    assert moved.timestamp == pytest.approx(2.05)


def test_interpolate_camera_endpoint(rng):
    a = CameraPoseUpToScale(lie.exp_so3(rng.normal(size=3)), rng.normal(size=3), 0.0)
    b = CameraPoseUpToScale(lie.exp_so3(rng.normal(size=3) * 0.2) @ a.rotation, rng.normal(size=3), 0.05)
    out = interpolate_camera(a, camera_twist(a, b), 0.05)
    np.testing.assert_allclose(out.position, b.position, atol=1e-14)
    np.testing.assert_allclose(out.rotation, b.rotation, atol=1e-9)


def test_offset_cap():
    a = CameraPoseUpToScale(np.eye(3), np.zeros(3), 0.0)
    with pytest.raises(OffsetOutOfRange):
        interpolate_camera(a, CameraTwist(np.zeros(3), np.zeros(3)), 0.6)


def test_interpolate_imu(motion):
    R0, p0, w, v = motion
    s = ImuState(R0, p0, v, 1.0)
    same = interpolate_imu(s, w, 0.0)
    np.testing.assert_array_equal(same.rotation, R0)
    back = interpolate_imu(s, w, 0.03)
    R, p = twist_motion(-0.03, R0, p0, w, v)
    np.testing.assert_allclose(back.rotation, R, atol=1e-9)
    np.testing.assert_allclose(back.position, p, atol=1e-9)
    again = interpolate_imu(back, w, -0.03)
    np.testing.assert_allclose(again.rotation, R0, atol=1e-9)
    np.testing.assert_allclose(again.position, p0, atol=1e-9)


def test_identity_cases(rng):
    c = CameraPoseUpToScale(lie.exp_so3(rng.normal(size=3)), rng.normal(size=3), 0.0)
    tw = CameraTwist(rng.normal(size=3), rng.normal(size=3))
    R, p = imu_from_camera(c, tw, 0.0, 1.0, Extrinsics.identity())
    np.testing.assert_allclose(R, c.rotation)
    np.testing.assert_allclose(p, c.position)
    st_ = ImuState(c.rotation, c.position, rng.normal(size=3))
    R, p = camera_from_imu(st_, rng.normal(size=3), 0.0, Extrinsics.identity())
    np.testing.assert_allclose(R, c.rotation)
    np.testing.assert_allclose(p, c.position)


def test_extrinsics_inverse_pair(rng):
    ex = Extrinsics(lie.exp_so3(rng.normal(size=3)), rng.normal(size=3))
    back = Extrinsics.from_cb(ex.r_cb, ex.p_cb)
    np.testing.assert_allclose(back.r_bc, ex.r_bc, atol=1e-12)
    np.testing.assert_allclose(back.p_bc, ex.p_bc, atol=1e-12)


def test_roundtrip_constant_twist(rng, motion):
    """Constant body rate and velocity, no lever arm: both interpolators are exact."""
    R0, p0, w, v = motion
    ex = Extrinsics(lie.exp_so3(rng.normal(size=3)), np.zeros(3))
    s_true, td = 2.0, 0.04

    def body(t):
        return R0 @ lie.exp_so3(w * t), p0 + v * t

    Rb0, pb0 = body(0.0)
    c = CameraPoseUpToScale(Rb0 @ ex.r_bc, pb0 / s_true, td)
    tw = CameraTwist(ex.r_cb @ w, v / s_true)
    R, p = imu_from_camera(c, tw, td, s_true, ex)
    Rb1, pb1 = body(td)
    np.testing.assert_allclose(R, Rb1, atol=1e-9)
    np.testing.assert_allclose(p, pb1, atol=1e-9)
    Rc, pc = camera_from_imu(ImuState(Rb1, pb1, v, td), w, td, ex)
    np.testing.assert_allclose(Rc, c.rotation, atol=1e-9)
    np.testing.assert_allclose(pc, pb0, atol=1e-9)


def test_simulator_ground_truth_recovery():
    """Camera pose at stamp t + td maps back to the body state at IMU stamp t.

    On the default trajectory at 20 Hz the constant-twist error peaks near
    1.1e-3 rad and 1.4e-3 m (centripetal acceleration about 2.2 m/s^2).
    """
    cfg = TrajectoryConfig()
    ex = default_extrinsics()
    dt = 0.05
    worst_r = worst_p = 0.0
    for t in np.arange(0.5, 9.5, 0.25):
        for td in (0.0, 0.02, 0.05):
            s = analytic_state(cfg, [t, t + dt, t + td])
            Rc = s.rotation[:2] @ ex.r_bc
            pc = np.einsum("nij,j->ni", s.rotation[:2], ex.p_bc) + s.position[:2]
            a = CameraPoseUpToScale(Rc[0], pc[0], t + td)
            b = CameraPoseUpToScale(Rc[1], pc[1], t + dt + td)
            R, p = imu_from_camera(a, camera_twist(a, b), td, 1.0, ex)
            worst_r = max(worst_r, lie.angle_between(R, s.rotation[2]))
            worst_p = max(worst_p, np.linalg.norm(p - s.position[2]))
    assert worst_r < 1.5e-3 and worst_p < 1.5e-3


def test_ground_truth_error_shrinks_quadratically():
    cfg = TrajectoryConfig()
    ex = default_extrinsics()
    errs = []
    for dt in (0.05, 0.025, 0.0125):
        s = analytic_state(cfg, [3.0, 3.0 + dt, 3.0 + dt / 2])
        Rc = s.rotation[:2] @ ex.r_bc
        pc = np.einsum("nij,j->ni", s.rotation[:2], ex.p_bc) + s.position[:2]
        a = CameraPoseUpToScale(Rc[0], pc[0], 0.0)
        b = CameraPoseUpToScale(Rc[1], pc[1], dt)
        R, p = imu_from_camera(a, camera_twist(a, b), dt / 2, 1.0, ex)
        errs.append(np.linalg.norm(p - s.position[2]))
    assert errs[1] < errs[0] / 3 and errs[2] < errs[1] / 3


@given(st.floats(0.1, 10.0))
def test_scale_acts_on_translation_only(s):
    rng = np.random.default_rng(0)
    c = CameraPoseUpToScale(lie.exp_so3(rng.normal(size=3)), rng.normal(size=3), 0.0)
    tw = CameraTwist(rng.normal(size=3), rng.normal(size=3))
    ex = default_extrinsics()
    R1, p1 = imu_from_camera(c, tw, 0.02, s, ex)
    R2, p2 = imu_from_camera(c, tw, 0.02, 2 * s, ex)
    np.testing.assert_array_equal(R1, R2)
    lever = c.rotation @ lie.exp_so3(tw.omega * 0.02) @ ex.p_cb
    np.testing.assert_allclose(p2 - lever, 2 * (p1 - lever), rtol=1e-12, atol=1e-12)


def test_camera_twist_vs_gyro_is_first_order():
    # forward-difference twist vs the gyro at the interval start: mismatch halves with the spacing
    from helpers import clean_rig, dataset
    from vioinit.temporal import twists_from_poses
    ds = dataset(clean_rig(), 0)
    r_bc = ds.truth.extrinsics.r_bc
    med = []
    for step in (4, 2, 1):
        fr = ds.frames[::step]
        t = np.array([f.pose.timestamp for f in fr])
        om, _ = twists_from_poses(np.array([f.pose.rotation for f in fr]),
                                  np.array([f.pose.position for f in fr]), t)
        g = ds.imu.gyro[np.searchsorted(ds.imu.t, t).clip(0, len(ds.imu.t) - 1)]
        med.append(np.median(np.linalg.norm(om @ r_bc.T - g, axis=1)[:-1]))
    ratios = np.array(med[:-1]) / np.array(med[1:])
    assert np.all((ratios > 1.7) & (ratios < 2.3))
    assert med[-1] < 0.1
