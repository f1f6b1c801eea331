"""Compare the compiled and numpy kernel backends on pipeline-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per kernel and checks the outputs agree exactly.
"""

import argparse
import time

import numpy as np

from objdepth import _kernels_py

try:
    from objdepth import _kernels
except ImportError:  # extension not built
    _kernels = None


def _cases(rng):
    # stereo: ~4.5k foreground pixels x 20 hypotheses into a 128x192x32 map
    n, l = 4500, 20
    uv = np.column_stack([rng.uniform(0, 191, n), rng.uniform(0, 127, n)])
    depths = rng.uniform(4, 40, (n, l))
    c, s = np.cos(0.02), np.sin(0.02)
    rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    trans = np.array([0.1, 0.0, 2.0])
    feat = rng.normal(size=(128, 192, 32))
    warp = (uv, depths, 180.0, 180.0, 95.5, 63.5, rot, trans, feat)

    # rendering: full 128x192 frame against 6 boxes
    v, u = np.mgrid[0:128, 0:192].astype(np.float64)
    rx, ry = (u - 95.5) / 180.0, (v - 63.5) / 180.0
    axes = []
    for yaw in rng.uniform(-np.pi, np.pi, 6):
        cy, sy = np.cos(yaw), np.sin(yaw)
        axes.append(np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]]))
    axes = np.array(axes)
    origins = np.column_stack([rng.uniform(-3, 3, 6), rng.uniform(-1, 1, 6), rng.uniform(-30, -8, 6)])
    half = rng.uniform(0.3, 3.0, (6, 3))
    box = (rx, ry, origins, axes, half)

    # splat: 4.5k pixels x 112 bins into a 128x128 grid
    p, b = 4500, 112
    ix = rng.integers(-1, 128, (p, b))
    iy = rng.integers(-1, 128, (p, b))
    probs = rng.dirichlet(np.ones(b), p)
    feats = rng.normal(size=(p, 32))
    spl = (ix, iy, probs, feats, 128, 128)
    return {"warp_sample": warp, "ray_box_depth": box, "splat": spl}


def _best(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b, equal_nan=True) if np.asarray(a).dtype.kind == "f" else np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    cases = _cases(np.random.default_rng(args.seed))
    print(f"{'kernel':14s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  identical")
    for name, call in cases.items():
        t_py, out_py = _best(getattr(_kernels_py, name), call, args.repeat)
        if _kernels is None:
            print(f"{name:14s} {t_py * 1e3:10.2f} {'n/a':>10s} {'':>8s}  (extension not built)")
            continue
        t_cy, out_cy = _best(getattr(_kernels, name), call, args.repeat)
        print(f"{name:14s} {t_py * 1e3:10.2f} {t_cy * 1e3:10.2f} {t_py / t_cy:7.1f}x  {_same(out_py, out_cy)}")


if __name__ == "__main__":
    main()
