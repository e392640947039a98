"""Flat ``key = value`` configuration with dotted sections.

Every tunable of the trajectory, rig, solvers and bench is addressable, e.g.
``imu.sigma_g = 0.00017`` or ``rig.bias_accel = -0.0236, 0.121, 0.0748``.
Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lie
from .errors import ConfigError
from .estimator import RobustCost, SolverConfig
from .imu import ImuNoiseSpec
from .initializer import InitPolicy, LinearConfig, Step1Config
from .simulator import CameraIntrinsics, RigConfig, TrajectoryConfig
from .temporal import Extrinsics

NOISE_AXES = ("gyro_density", "accel_density", "gyro_walk", "accel_walk", "bias_gyro", "bias_accel")


@dataclass(frozen=True)
class PipelineConfig:
    scale_applied: float = 2.0
    first_frame: int = 0
    keyframes: int = 0  # 0 keeps every selected frame
    keyframe_step: int = 1
    mode: str = "batch"  # or "incremental"
    refine: bool = False
    ba_window: int = 10
    visual: str = "auto"  # "auto" reconstructs from pixels when they are noisy, "truth", "reconstruct"


@dataclass(frozen=True)
class SweepSpec:
    axis: str = "gyro_density"
    multipliers: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
    offsets_ms: tuple = (0.0, 50.0, 100.0)
    seeds: int = 25
    seed_base: int = 0
    others: str = "zero"  # or "nominal"
    aggregation: str = "median"

    def __post_init__(self):
        if self.axis not in NOISE_AXES:
            raise ConfigError(f"unknown noise axis {self.axis!r}")
        if any(m < 0 for m in self.multipliers):
            raise ConfigError("multipliers must be non-negative")
        if self.seeds < 1:
            raise ConfigError("need at least one seed")
        if self.others not in ("zero", "nominal"):
            raise ConfigError("sweep.others must be 'zero' or 'nominal'")
        if self.aggregation != "median":
            raise ConfigError("only median aggregation is supported")


@dataclass(frozen=True)
class RunConfig:
    traj: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    step1: Step1Config = field(default_factory=Step1Config)
    linear: LinearConfig = field(default_factory=LinearConfig)
    init: InitPolicy = field(default_factory=InitPolicy)
    solver: SolverConfig = field(default_factory=SolverConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)


# config key -> ImuNoiseSpec field
_IMU_KEYS = {"sigma_g": "gyro_density", "sigma_a": "accel_density", "sigma_bg": "gyro_walk",
             "sigma_ba": "accel_walk", "rate": "rate"}
_RIG_SKIP = {"extrinsics", "noise", "intrinsics"}
_INIT_SKIP = {"step1", "linear"}
_SOLVER_SKIP = {"reproj_robust", "imu_robust"}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list, np.ndarray)):
        return ", ".join(_fmt(float(x)) for x in v)
    return str(v)


def _parse(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if default is None:
            if text.lower() == "none":
                return None
            return int(text) if text.lstrip("+-").isdigit() else float(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, np.ndarray):
            arr = np.array([float(x) for x in text.split(",")])
            if arr.shape != default.shape:
                raise ValueError(f"expected {default.size} values")
            return arr
        if isinstance(default, tuple):
            return tuple(float(x) for x in text.split(",") if x.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None


def _plain_fields(obj, skip=()):
    return [(f.name, getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name not in skip]


def config_items(cfg: RunConfig) -> list[tuple[str, str]]:
    """Every configurable value as ``(dotted key, text)`` pairs."""
    out = []

    def add(section, obj, skip=()):
        out.extend((f"{section}.{k}", _fmt(v)) for k, v in _plain_fields(obj, skip))

    add("traj", cfg.traj)
    for key, name in _IMU_KEYS.items():
        out.append((f"imu.{key}", _fmt(getattr(cfg.rig.noise, name))))
    add("camera", cfg.rig.intrinsics)
    ex = cfg.rig.extrinsics
    out.append(("rig.r_bc_ypr_deg", _fmt(np.degrees(lie.to_ypr(ex.r_bc)))))
    out.append(("rig.p_bc", _fmt(ex.p_bc)))
    add("rig", cfg.rig, _RIG_SKIP)
    add("step1", cfg.step1)
    add("linear", cfg.linear)
    add("init", cfg.init, _INIT_SKIP)
    add("solver", cfg.solver, _SOLVER_SKIP)
    out.append(("solver.reproj_huber", _fmt(cfg.solver.reproj_robust.threshold)))
    out.append(("solver.imu_huber", _fmt(cfg.solver.imu_robust.threshold)))
    add("pipeline", cfg.pipeline)
    add("sweep", cfg.sweep)
    return out


def parse_text(text: str) -> dict[str, str]:
    entries = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in entries:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        entries[key] = value
    return entries


def apply(cfg: RunConfig, entries: dict[str, str]) -> RunConfig:
    """Return ``cfg`` with the given dotted-key overrides applied."""
    known = dict(config_items(cfg))
    # run.* keys are manifest annotations (seed, code version), not settings
    entries = {k: v for k, v in entries.items() if not k.startswith("run.")}
    unknown = sorted(set(entries) - set(known))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    by_section: dict[str, dict[str, str]] = {}
    for key, value in entries.items():
        section, name = key.split(".", 1)
        by_section.setdefault(section, {})[name] = value

    def updated(obj, section, rename=None):
        kv = by_section.get(section, {})
        changes = {}
        for name, text in kv.items():
            attr = (rename or {}).get(name, name)
            if not hasattr(obj, attr):
                continue
            changes[attr] = _parse(text, getattr(obj, attr), f"{section}.{name}")
        try:
            return dataclasses.replace(obj, **changes) if changes else obj
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    traj = updated(cfg.traj, "traj")
    noise = updated(cfg.rig.noise, "imu", _IMU_KEYS)
    intr = updated(cfg.rig.intrinsics, "camera")
    ex = cfg.rig.extrinsics
    rig_kv = by_section.get("rig", {})
    if "r_bc_ypr_deg" in rig_kv or "p_bc" in rig_kv:
        ypr = np.degrees(lie.to_ypr(ex.r_bc))
        if "r_bc_ypr_deg" in rig_kv:
            ypr = _parse(rig_kv["r_bc_ypr_deg"], np.zeros(3), "rig.r_bc_ypr_deg")
        p_bc = _parse(rig_kv["p_bc"], np.zeros(3), "rig.p_bc") if "p_bc" in rig_kv else ex.p_bc
        ex = Extrinsics(lie.from_ypr(*np.radians(ypr)), p_bc)
    rig = updated(cfg.rig, "rig")
    try:
        rig = dataclasses.replace(rig, noise=noise, intrinsics=intr, extrinsics=ex)
    except ValueError as exc:
        raise ConfigError(f"[rig] {exc}") from None
    step1 = updated(cfg.step1, "step1")
    linear = updated(cfg.linear, "linear")
    init = dataclasses.replace(updated(cfg.init, "init"), step1=step1, linear=linear)
    solver = updated(cfg.solver, "solver")
    sk = by_section.get("solver", {})
    if "reproj_huber" in sk:
        solver = dataclasses.replace(solver, reproj_robust=RobustCost(
            "huber", _parse(sk["reproj_huber"], 0.0, "solver.reproj_huber")))
    if "imu_huber" in sk:
        solver = dataclasses.replace(solver, imu_robust=RobustCost(
            "huber", _parse(sk["imu_huber"], 0.0, "solver.imu_huber")))
    pipeline = updated(cfg.pipeline, "pipeline")
    sweep = updated(cfg.sweep, "sweep")
    return RunConfig(traj, rig, step1, linear, init, solver, pipeline, sweep)


def load(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    entries = parse_text(Path(path).read_text(encoding="utf-8")) if path else {}
    entries.update(overrides or {})
    return apply(RunConfig(), entries)


def dump(cfg: RunConfig, extra: dict[str, str] | None = None) -> str:
    lines = [f"{k} = {v}" for k, v in config_items(cfg)]
    lines += [f"{k} = {v}" for k, v in (extra or {}).items()]
    return "\n".join(lines) + "\n"
