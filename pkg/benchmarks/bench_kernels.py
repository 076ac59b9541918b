"""Numba vs numpy timings for the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both implementations are called directly (the FRACSHE_DISABLE_NUMBA flag only
chooses which one the package uses), and every pair is checked for agreement
before it is timed.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from fracshe import _accel


def cases():
    keys = np.array([_accel.slice_key(s, 0, 7) for s in range(1, 201)], dtype=np.uint64)
    n = 4096
    k = 2 * np.pi * np.fft.rfftfreq(n, d=1 / 512)
    big = np.random.default_rng(0).standard_normal((1000, 2048)) * 1e8
    u = np.cumsum(np.random.default_rng(1).standard_normal((200, 8192)), axis=1) * 0.01
    idx = np.arange(1024, 7168, 8)
    w = np.ones((200, idx.size))
    kp = 2 * np.pi * 512
    return {
        "rng normals (200 x 4096)": (
            lambda: _accel._normals_np(keys, 0, n),
            lambda: _accel._normals_nb(keys, 0, n, _accel.ZIG_X, _accel.ZIG_RATIO), 0.0),
        "alias spectrum (2049 k, q<=256)": (
            lambda: _accel._alias_np(k, kp, 1.5, 0.0, 1e-4, 256),
            lambda: _accel._alias_nb(k, kp, 1.5, 0.0, 1e-4, 256), 1e-13),
        "compensated sum (1000 x 2048)": (
            lambda: _accel._neumaier_np(big), lambda: _accel._neumaier_nb(big), 1e-15),
        "variation sums (200 x 768, p=4)": (
            lambda: _accel._variation_np(u, idx, 8, w, 4.0),
            lambda: _accel._variation_nb(u, idx, 8, w, 4.0), 1e-12),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        print("numba unavailable or disabled; nothing to compare", file=sys.stderr)
        return 1
    rows = []
    for name, (f_np, f_nb, rtol) in cases().items():
        a, b = f_np(), f_nb()  # also warms the jit cache
        scale = max(np.abs(a).max(), 1e-300)
        if np.abs(a - b).max() > rtol * scale:
            print(f"{name}: implementations disagree", file=sys.stderr)
            return 1
        t_np = min(timeit.repeat(f_np, number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(f_nb, number=1, repeat=args.repeat))
        rows.append({"kernel": name, "numpy_ms": 1e3 * t_np, "numba_ms": 1e3 * t_nb, "speedup": t_np / t_nb})
    w = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':{w}s}  {'numpy ms':>10s}  {'numba ms':>10s}  {'speedup':>8s}")
    for r in rows:
        print(f"{r['kernel']:{w}s}  {r['numpy_ms']:10.2f}  {r['numba_ms']:10.2f}  {r['speedup']:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
