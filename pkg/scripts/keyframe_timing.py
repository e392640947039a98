"""Three-step initialization wall time against keyframe count (median of 10 runs).

usage: python scripts/keyframe_timing.py [counts...]
"""
import sys
import time

import numpy as np

from vioinit.config import RunConfig
from vioinit.initializer import initialize_batch
from vioinit.pipeline import select_keyframes
from vioinit.simulator import synthesize, to_up_to_scale


def main(counts=(10, 20, 30, 40)):
    cfg = RunConfig()
    ds = to_up_to_scale(synthesize(cfg.traj, cfg.rig, 0), 2.0)
    print("keyframes,median_s")
    for n in counts:
        frames = select_keyframes(ds.frames, 0, 4, n)
        times = []
        for _ in range(10):
            t0 = time.perf_counter()
            initialize_batch(frames, ds.imu, cfg.rig.noise, cfg.init.hold, cfg.step1, cfg.linear,
                             cfg.init.step3_iterations)
            times.append(time.perf_counter() - t0)
        print(f"{n},{np.median(times):.4f}")


if __name__ == "__main__":
    main(tuple(int(a) for a in sys.argv[1:]) or (10, 20, 30, 40))
