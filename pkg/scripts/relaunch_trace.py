"""Print the incremental initialization trace for one injected offset.

usage: python scripts/relaunch_trace.py [offset_ms] [seed]
"""
import sys

import numpy as np

from vioinit import lie
from vioinit.initializer import run_initialization
from vioinit.simulator import RigConfig, TrajectoryConfig, synthesize


def main(offset_ms=45.0, seed=0):
    ds = synthesize(TrajectoryConfig(), RigConfig(td=offset_ms * 1e-3), seed)
    res = run_initialization(ds.frames, ds.imu, ds.rig.noise)
    print(f"relaunches {res.relaunch_count}, converged at {res.converged_at:.2f} s, "
          f"offset {res.td_total * 1e3:.3f} ms")
    print(f"{'time_s':>8s} {'yaw':>9s} {'pitch':>9s} {'roll':>9s} {'td_ms':>8s} {'scale':>8s}")
    for h in res.history:
        ypr = np.degrees(lie.to_ypr(h["r_bc"]))
        print(f"{h['time']:8.2f} {ypr[0]:9.4f} {ypr[1]:9.4f} {ypr[2]:9.4f} {h['td_total'] * 1e3:8.3f} "
              f"{h['scale']:8.5f}")


if __name__ == "__main__":
    main(*(float(a) for a in sys.argv[1:2]), *(int(a) for a in sys.argv[2:3]))
