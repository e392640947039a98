"""Monte-Carlo sweeps over IMU noise multipliers and injected time offsets."""
from __future__ import annotations

import dataclasses
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .config import NOISE_AXES, RunConfig, dump
from .errors import AllRunsFailed, VioInitError
from .imu import ImuNoiseSpec
from .initializer import body_states
from .pipeline import run_pipeline

METRIC_FIELDS = ("rotation_deg", "translation_m", "offset_ms", "scale_rel", "bias_gyro", "bias_accel",
                 "gravity_deg", "velocity_rmse", "velocity_rmse_refined", "trajectory_rmse", "keyframes",
                 "relaunches")


@dataclass
class MetricsRow:
    rotation_deg: float = math.nan
    translation_m: float = math.nan
    offset_ms: float = math.nan
    scale_rel: float = math.nan
    bias_gyro: float = math.nan
    bias_accel: float = math.nan
    gravity_deg: float = math.nan
    velocity_rmse: float = math.nan
    velocity_rmse_refined: float = math.nan
    trajectory_rmse: float = math.nan
    keyframes: float = 0.0
    relaunches: float = 0.0
    wall_time: float = field(default=math.nan, compare=False)
    ok: bool = True
    reason: str = ""

    def values(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in METRIC_FIELDS], float)


@dataclass(frozen=True)
class Cell:
    axis: str
    multiplier: float
    offset_ms: float


def cell_config(cfg: RunConfig, cell: Cell) -> RunConfig:
    """Base config with one noise axis scaled and the offset injected.

    With ``sweep.others = zero`` every other density and constant bias is
    zeroed; with ``nominal`` they keep their base values.
    """
    if cell.axis not in NOISE_AXES:
        raise ValueError(f"unknown noise axis {cell.axis!r}")
    base = cfg.rig
    zero = cfg.sweep.others == "zero"
    dens = {k: (0.0 if zero else getattr(base.noise, k)) for k in NOISE_AXES[:4]}
    bg = np.zeros(3) if zero else np.array(base.bias_gyro, float)
    ba = np.zeros(3) if zero else np.array(base.bias_accel, float)
    m = cell.multiplier
    if cell.axis in dens:
        dens[cell.axis] = getattr(base.noise, cell.axis) * m
    elif cell.axis == "bias_gyro":
        bg = np.array(base.bias_gyro, float) * m
    else:
        ba = np.array(base.bias_accel, float) * m
    noise = ImuNoiseSpec(**dens, rate=base.noise.rate)
    rig = dataclasses.replace(base, noise=noise, bias_gyro=bg, bias_accel=ba, td=cell.offset_ms * 1e-3)
    return dataclasses.replace(cfg, rig=rig)


def evaluate(out) -> MetricsRow:
    """Errors of one pipeline outcome against the dataset truth."""
    ds = out.dataset
    truth = ds.truth
    kfs = out.keyframes
    ex = truth.extrinsics
    s1, s3 = out.step1, out.step3
    # the simulator's IMU stamps are physical time, so keyframe IMU stamps index the truth directly
    st = ds.truth_state(kfs.t)
    bg_true = truth.bias_gyro_series[np.searchsorted(ds.imu.t, kfs.t).clip(0, len(ds.imu.t) - 1)].mean(0)
    ba_true = truth.bias_accel_series[np.searchsorted(ds.imu.t, kfs.t).clip(0, len(ds.imu.t) - 1)].mean(0)
    g = s3.gravity
    cosg = g @ truth.gravity / (np.linalg.norm(g) * np.linalg.norm(truth.gravity))
    _, pb = body_states(kfs, s1, s3)
    row = MetricsRow(
        rotation_deg=metrics.rotation_error_deg(s1.r_bc, ex.r_bc),
        translation_m=float(np.linalg.norm(s3.p_cb - ex.p_cb)),
        offset_ms=abs(out.td_total - truth.td) * 1e3,
        scale_rel=abs(s3.scale - truth.scale) / truth.scale,
        bias_gyro=float(np.linalg.norm(s1.bias_gyro - bg_true)),
        bias_accel=float(np.linalg.norm(s3.accel_bias - ba_true)),
        gravity_deg=float(np.degrees(np.arccos(np.clip(cosg, -1.0, 1.0)))),
        velocity_rmse=metrics.velocity_rmse(out.velocities, st.velocity),
        trajectory_rmse=metrics.align_and_rmse(pb, st.position),
        keyframes=float(len(kfs)),
        relaunches=float(out.relaunches),
    )
    if out.refined is not None:
        row.velocity_rmse_refined = metrics.velocity_rmse(out.refined.v, st.velocity)
    return row


def run_cell(cfg: RunConfig, cell: Cell | None, seed: int) -> MetricsRow:
    """One full run; pipeline errors become a failed row instead of propagating."""
    run_cfg = cfg if cell is None else cell_config(cfg, cell)
    t0 = time.perf_counter()
    try:
        row = evaluate(run_pipeline(run_cfg, seed))
    except (VioInitError, np.linalg.LinAlgError) as exc:
        row = MetricsRow(ok=False, reason=f"{type(exc).__name__}: {exc}")
    row.wall_time = time.perf_counter() - t0
    return row


@dataclass
class CellSummary:
    cell: Cell
    median: MetricsRow | None
    n_ok: int
    n_failed: int
    wall_time: float


def aggregate(rows) -> tuple[MetricsRow, int]:
    """Component-wise median over successful rows and the number of failures."""
    rows = list(rows)
    good = [r for r in rows if r.ok]
    if not good:
        raise AllRunsFailed(f"all {len(rows)} runs failed")
    vals = np.array([r.values() for r in good])
    with np.errstate(all="ignore"):
        med = np.array([np.nan if np.all(np.isnan(vals[:, k])) else np.nanmedian(vals[:, k])
                        for k in range(vals.shape[1])])
    out = MetricsRow(**{f: float(v) for f, v in zip(METRIC_FIELDS, med)})
    out.wall_time = float(np.median([r.wall_time for r in good]))
    return out, len(rows) - len(good)


def _task(args):
    cfg, cell, seed = args
    return run_cell(cfg, cell, seed)


def sweep(cfg: RunConfig, threads: int = 1, progress=None) -> list[CellSummary]:
    """All multiplier x offset cells for the configured axis, each over the configured seeds."""
    sp = cfg.sweep
    cells = [Cell(sp.axis, float(m), float(o)) for m in sp.multipliers for o in sp.offsets_ms]
    seeds = [sp.seed_base + k for k in range(sp.seeds)]
    tasks = [(cfg, c, s) for c in cells for s in seeds]
    if threads <= 1:
        rows = []
        for t in tasks:
            rows.append(_task(t))
            if progress:
                progress(len(rows), len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * threads))))
    out = []
    for n, c in enumerate(cells):
        chunk = rows[n * len(seeds):(n + 1) * len(seeds)]
        wall = float(sum(r.wall_time for r in chunk))
        try:
            med, nf = aggregate(chunk)
            out.append(CellSummary(c, med, len(chunk) - nf, nf, wall))
        except AllRunsFailed:
            out.append(CellSummary(c, None, 0, len(chunk), wall))
    return out


def _g9(x) -> str:
    return "nan" if x is None or not np.isfinite(x) else f"{x:.9g}"


def write_sweep(out_dir, cfg: RunConfig, summaries: list[CellSummary], stem: str | None = None):
    """Write the aggregated CSV, a wall-time sidecar and the run manifest; return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"sweep_{cfg.sweep.axis}"
    csv_path = out_dir / f"{stem}.csv"
    header = ["axis", "multiplier", "offset_ms", "n_ok", "n_failed", *METRIC_FIELDS]
    lines = [",".join(header)]
    timing = ["axis,multiplier,offset_ms,total_wall_time_s,median_wall_time_s"]
    for s in summaries:
        vals = [np.nan] * len(METRIC_FIELDS) if s.median is None else list(s.median.values())
        lines.append(",".join([s.cell.axis, _g9(s.cell.multiplier), _g9(s.cell.offset_ms), str(s.n_ok),
                               str(s.n_failed), *map(_g9, vals)]))
        med_t = math.nan if s.median is None else s.median.wall_time
        timing.append(",".join([s.cell.axis, _g9(s.cell.multiplier), _g9(s.cell.offset_ms), _g9(s.wall_time),
                                _g9(med_t)]))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    time_path = out_dir / f"{stem}.timing.csv"
    time_path.write_text("\n".join(timing) + "\n", encoding="utf-8")
    manifest = out_dir / f"{stem}.manifest"
    manifest.write_text(dump(cfg, {"run.code_version": __version__,
                                   "run.cells": str(len(summaries)),
                                   "run.failed_runs": str(sum(s.n_failed for s in summaries))}),
                        encoding="utf-8")
    return csv_path, time_path, manifest


def default_threads() -> int:
    return max(1, min(8, os.cpu_count() or 1))
