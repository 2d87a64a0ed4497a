"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3]

Each kernel runs on both backends with identical inputs; outputs are
checked for equality before timings are reported.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from blockamp import _pykernels

try:
    from blockamp import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases():
    rng = np.random.default_rng(7)
    samples = rng.gamma(4.0, 12.0, size=2000)
    grid = np.arange(0.0, 1001.0)
    times = np.sort(rng.integers(0, 3_600_000, size=200_000))
    dropped = rng.random(times.size) < 0.97
    return {
        "sqrt_fanout(20000 txs, 50 peers, k=7)": ("sqrt_fanout", (20_000, 50, 7, 12345)),
        "monitor_hits(100 peers, k=10, m=1e6)": ("monitor_hits", (100, 10, 1_000_000, 99)),
        "kde_grid(2000 samples, 1001 points)": ("kde_grid", (samples, 9.5, grid)),
        "burst_windows(200k obs)": ("burst_windows", (times, dropped, 12_000, 100, 0.95)),
    }


def _time(fn, args, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b):
    if isinstance(a, np.ndarray):
        return np.allclose(a, b, rtol=1e-12, atol=1e-300) if a.dtype.kind == "f" \
            else np.array_equal(a, b)
    return a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled backend unavailable; only the fallback can run")
    print(f"{'kernel':42s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}  match")
    for label, (name, kargs) in _cases().items():
        tp, op = _time(getattr(_pykernels, name), kargs, args.repeat)
        if _ckernels is None:
            print(f"{label:42s} {tp:10.4f} {'-':>10s} {'-':>8s}  -")
            continue
        tc, oc = _time(getattr(_ckernels, name), kargs, args.repeat)
        print(f"{label:42s} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}x  {_same(op, oc)}")


if __name__ == "__main__":
    main()
