"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from acnet import _pykernels
from acnet.temporal import cell_bounds

try:
    from acnet import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    for n, d in ((16, 32), (64, 128), (128, 128)):
        clips = rng.normal(size=(n, d))
        yield f"span_max_pool N={n} d={d}", "span_max_pool", (clips,)
    for n in (16, 64, 128):
        yield f"iou_map N={n}", "iou_map", (3.3, 17.9, n, float(n))
    for n in (16, 64):
        starts, ends = cell_bounds(n, float(n))
        order = rng.permutation(len(starts))
        yield f"greedy_nms {len(starts)} cells", "greedy_nms", (starts[order].copy(), ends[order].copy(), 0.5)
    edges = np.sort(rng.uniform(0, 100, size=20))
    yield "region_iou 10 spans", "region_iou", (edges[0::2].copy(), edges[1::2].copy(), 20.0, 60.0)


def best_of(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy':>12s} {'cython':>12s} {'speedup':>8s}")
    for label, name, fargs in cases(rng):
        slow = best_of(getattr(_pykernels, name), fargs, args.repeat)
        if _kernels is None:
            print(f"{label:32s} {slow * 1e6:10.1f}us {'n/a':>12s} {'':>8s}")
            continue
        fast = best_of(getattr(_kernels, name), fargs, args.repeat)
        print(f"{label:32s} {slow * 1e6:10.1f}us {fast * 1e6:10.1f}us {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
