"""End-to-end runs: synthetic data, visual reconstruction, initialization and refinement."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import estimator as est
from .initializer import initialize_batch, run_initialization
from .simulator import CameraFrame, CameraIntrinsics, synthesize, to_up_to_scale
from .temporal import CameraPoseUpToScale


def visual_reconstruction(frames, landmarks, intrinsics: CameraIntrinsics, pixel_sigma: float = 1.0,
                          max_iterations: int = 20):
    """Vision-only bundle adjustment standing in for a monocular front end.

    Starts from the given poses and landmarks and returns frames with refined
    poses plus refined landmarks; the first pose is held fixed and the scale
    gauge is left to the damping.
    """
    frames = list(frames)
    N = len(frames)
    R = np.array([f.pose.rotation for f in frames])
    p = np.array([f.pose.position for f in frames])
    t = np.array([f.pose.timestamp for f in frames])
    obs_kf = np.concatenate([np.full(len(f.ids), n) for n, f in enumerate(frames)])
    obs_lm = np.concatenate([np.asarray(f.ids, int) for f in frames])
    obs_uv = np.concatenate([np.asarray(f.uv, float).reshape(-1, 2) for f in frames])
    z = np.zeros((N, 3))
    state = est.FullState(R=R, p=p, v=z, dbg=z, dba=z, bg_ref=z, ba_ref=z, gyro=z, t=t,
                          obs_kf=obs_kf, obs_lm=obs_lm, obs_uv=obs_uv,
                          landmarks=np.asarray(landmarks, float), r_bc=np.eye(3), p_bc=np.zeros(3),
                          td=0.0, preint=None, gravity=np.zeros(3))
    cfg = est.SolverConfig(max_iterations=max_iterations, pixel_sigma=pixel_sigma, use_imu=False,
                           fix_extrinsics=True, fix_offset=True)
    out, report = est.optimize(state, intrinsics, "global", config=cfg)
    refined = [CameraFrame(CameraPoseUpToScale(out.R[n], out.p[n].copy(), f.pose.timestamp),
                           f.ids, f.uv, f.true_time) for n, f in enumerate(frames)]
    return refined, out.landmarks, report


def select_keyframes(frames, first: int = 0, step: int = 1, count: int = 0):
    sel = list(frames)[first::max(1, step)]
    return sel[:count] if count > 0 else sel


@dataclass
class PipelineOutcome:
    dataset: object
    keyframes: object  # KeyframeSet used for Steps 2-3
    step1: object
    step3: object
    velocities: np.ndarray
    td_total: float
    relaunches: int
    refined: est.FullState | None
    report: est.OptimizeReport | None
    timings: dict


def run_pipeline(cfg, seed: int, dataset=None) -> PipelineOutcome:
    """Simulate (unless ``dataset`` is given), initialize and optionally refine one run."""
    pc = cfg.pipeline
    timings = {}
    if dataset is None:
        dataset = to_up_to_scale(synthesize(cfg.traj, cfg.rig, seed), pc.scale_applied)
    frames = select_keyframes(dataset.frames, pc.first_frame, pc.keyframe_step, pc.keyframes)
    landmarks = dataset.landmarks
    reconstruct = pc.visual == "reconstruct" or (pc.visual == "auto" and cfg.rig.pixel_noise > 0)
    if reconstruct:
        t0 = time.perf_counter()
        frames, landmarks, _ = visual_reconstruction(frames, landmarks, cfg.rig.intrinsics,
                                                     cfg.solver.pixel_sigma)
        timings["visual"] = time.perf_counter() - t0
    noise = cfg.rig.noise
    t0 = time.perf_counter()
    if pc.mode == "batch":
        res = initialize_batch(frames, dataset.imu, noise, cfg.init.hold, cfg.step1, cfg.linear,
                               cfg.init.step3_iterations)
        kfs, s1, s3, vel, td_total, relaunches = (res.keyframes, res.step1, res.step3, res.velocities,
                                                  res.td_total, 0)
    elif pc.mode == "incremental":
        res = run_initialization(frames, dataset.imu, noise, cfg.init)
        kfs, s1, s3, vel, td_total, relaunches = (res.keyframes, res.step1, res.step3, res.velocities,
                                                  res.td_total, res.relaunch_count)
    else:
        raise ValueError(f"unknown pipeline mode {pc.mode!r}")
    timings["initialization"] = time.perf_counter() - t0
    refined = report = None
    if pc.refine:
        t0 = time.perf_counter()
        state = est.build_state(kfs, s1, s3, vel, landmarks)
        refined, report = est.optimize(state, cfg.rig.intrinsics, "global", pc.ba_window, cfg.solver)
        timings["refinement"] = time.perf_counter() - t0
    return PipelineOutcome(dataset, kfs, s1, s3, vel, td_total, relaunches, refined, report, timings)
