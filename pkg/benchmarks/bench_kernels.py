"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from dexscaffold import _pykernels as py
from dexscaffold.geometry import euler_to_matrix

try:
    from dexscaffold import _ckernels as cy
except ImportError:
    cy = None


def cases(rng):
    B, P, O = 256, 4, 3
    pts = rng.uniform(-0.3, 0.3, (B, P, 3))
    pos = rng.uniform(-0.1, 0.1, (B, O, 3))
    rot = np.broadcast_to(euler_to_matrix(np.array([0.1, 0.2, 0.3])), (B, O, 3, 3)).copy()
    shapes = np.array([0, 1, 2])
    dims = np.array([[0.04, 0, 0], [0.2, 0.1, 0.05], [0.03, 0, 0.12]])
    r, v = rng.normal(size=(24, 256)), rng.normal(size=(24, 256))
    d = (rng.random((24, 256)) < 0.05).astype(float)
    last = rng.normal(size=256)
    z = rng.normal(size=256)

    def zig(mod):
        trend, ext, hi = np.zeros(256, np.int8), np.zeros(256), np.zeros(256)
        sw = np.zeros(256, np.int32)
        return lambda: mod.zigzag_update(z, trend, ext, hi, sw, 0.05)

    return {
        "signed_distances (256x4x3)": lambda m: (lambda: m.signed_distances(pts, pos, rot, shapes, dims)),
        "gae (24x256)": lambda m: (lambda: m.gae(r, v, d, last, 0.99, 0.95)),
        "zigzag_update (256)": zig,
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    mods = [("python", py)] + ([("cython", cy)] if cy is not None else [])
    print(f"{'kernel':<28}" + "".join(f"{name:>14}" for name, _ in mods) + "   speedup")
    for label, make in cases(rng).items():
        times = []
        for _, mod in mods:
            t = min(timeit.repeat(make(mod), number=args.number, repeat=args.repeat))
            times.append(t / args.number * 1e6)
        cols = "".join(f"{t:>11.1f} us" for t in times)
        speed = f"{times[0] / times[1]:8.1f}x" if len(times) == 2 else "       -"
        print(f"{label:<28}{cols}  {speed}")
    if cy is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
