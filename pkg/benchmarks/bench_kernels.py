#!/usr/bin/env python3
"""Time the numba and numpy kernel paths side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed up once (this also triggers numba compilation) and
then timed ``--repeat`` times; the table reports the median per backend.
"""
import argparse
import statistics
import time

import numpy as np

from sdrecog import _accel
from sdrecog import montecarlo as mc
from sdrecog.recognizer import RecognizerConfig


def _scan_case(size, n=50_000):
    bits = (np.random.default_rng(1).random(size) < 0.5).astype(np.uint8)

    def run():
        ring = np.zeros(n, dtype=np.uint8)
        # band wide enough that nothing triggers: the whole stream is scanned
        return _accel.scan(bits, ring, 0, 0, 0, -1, n + 1)
    return run


def _rounds_case(rows):
    u = np.random.default_rng(2).random((rows, 3))
    cdf = np.array([0.25, 0.5, 0.75, 1.0])
    eff = np.array([1.0, 1.0, 1.0, 0.0])
    keep = np.ones(4, dtype=np.bool_)
    return lambda: _accel.detector_rounds(u, cdf, eff, keep, rows)


def _trials_case(trials, n=50_000):
    cfg = RecognizerConfig.from_precision(0.05, 0.001, window_n=n)
    return lambda: mc.trial_delays(cfg, trials, master_seed=0)


CASES = {
    "scan 10M bits": _scan_case(10_000_000),
    "detector rounds 2M uses": _rounds_case(2_000_000),
    "recognition trials 100 x n=50000": _trials_case(100),
}


def median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _accel.numba is not None else [])
    saved = _accel.USE_NUMBA
    print(f"{'kernel':36s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    try:
        for name, fn in CASES.items():
            row = {}
            for b in backends:
                _accel.USE_NUMBA = b == "numba"
                row[b] = median_time(fn, args.repeat)
            speed = f"{row['numpy'] / row['numba']:10.1f}x" if "numba" in row else "         -"
            print(f"{name:36s}" + "".join(f"{row[b]:11.4f}s" for b in backends) + speed)
    finally:
        _accel.USE_NUMBA = saved


if __name__ == "__main__":
    main()
