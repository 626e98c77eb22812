"""Compare the numba and numpy kernel backends on random detection sets.

    python3 benchmarks/bench_kernels.py [--sizes 50 200 1000] [--repeats 5]

Each kernel runs on the same ranked inputs for both backends; outputs are
checked for agreement before timing. Numba compile time is excluded by a
warm-up call and reported separately.
"""

import argparse
import time

import numpy as np

from tileforge import _accel, kernels


def random_inputs(rng, n, extent=2000.0, classes=5):
    xy = rng.uniform(0, extent, size=(n, 2))
    wh = rng.uniform(8, 80, size=(n, 2))
    boxes = np.hstack([xy, xy + wh])
    scores = np.sort(rng.random(n))[::-1].copy()
    cls = rng.integers(0, classes, size=n).astype(np.int64)
    return boxes, cls, scores


def calls(boxes, cls, scores, gts):
    m = kernels.METRIC_IOS
    return {
        "nms_keep": lambda t: t["nms_keep"](boxes, cls, m, 0.5, True),
        "greedy_nmm_labels": lambda t: t["greedy_nmm_labels"](boxes, cls, m, 0.5, True),
        "nmm_labels": lambda t: t["nmm_labels"](boxes, cls, m, 0.5, True),
        "soft_nms": lambda t: t["soft_nms"](boxes, cls, scores, m, 0.5, True),
        "greedy_match": lambda t: t["greedy_match"](boxes, gts, 0.5),
    }


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 200, 1000])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18}{'n':>6}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    warmed = False
    for n in args.sizes:
        boxes, cls, scores = random_inputs(rng, n)
        gts = boxes[rng.permutation(n)[: max(1, n // 2)]] + rng.normal(0, 2, size=(max(1, n // 2), 4))
        gts[:, 2:] = np.maximum(gts[:, 2:], gts[:, :2])
        for name, fn in calls(boxes, cls, scores, gts).items():
            if not warmed:
                t0 = time.perf_counter()
                for f in calls(boxes, cls, scores, gts).values():
                    f(kernels.NUMBA_KERNELS)
                print(f"(numba compile/load: {time.perf_counter() - t0:.2f}s)")
                warmed = True
            a, b = fn(kernels.NUMPY_KERNELS), fn(kernels.NUMBA_KERNELS)
            if not all(np.allclose(x, y) for x, y in zip(np.atleast_1d(a) if not isinstance(a, tuple) else a,
                                                         np.atleast_1d(b) if not isinstance(b, tuple) else b)):
                raise SystemExit(f"{name}: backends disagree at n={n}")
            t_np = best_of(lambda: fn(kernels.NUMPY_KERNELS), args.repeats)
            t_nb = best_of(lambda: fn(kernels.NUMBA_KERNELS), args.repeats)
            print(f"{name:<18}{n:>6}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
