"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes follow the tiny profile (16^3 voxels, batch 32) plus a 20^3 alignment
search and a 7168-dim SVM problem. Each kernel is warmed up once so numba
compilation is excluded. Output is one line per kernel with the best time for
each backend and the speedup.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from voxgan import kernels
from voxgan.evaluation import PERMUTATIONS


def cases(rng):
    xp = rng.random((32, 32, 10, 10, 10)).astype(np.float32)
    cols = rng.random((32, 32 * 64, 64)).astype(np.float32)
    mask = rng.random((32, 32, 32)) < 0.3
    pred = rng.random((20, 20, 20))
    truth = rng.random((20, 20, 20)) < 0.2
    X = rng.normal(size=(200, 7168))
    y = np.where(rng.random(200) < 0.5, 1.0, -1.0)
    up = np.full(200, 0.01)
    return {
        "im2col 32x32x8^3 k4 s2": lambda m: m.im2col(xp, (4, 4, 4), (2, 2, 2), (4, 4, 4)),
        "col2im 32x32x8^3 k4 s2": lambda m: m.col2im(cols, xp.shape, (4, 4, 4), (2, 2, 2), (4, 4, 4)),
        "label_components 32^3": lambda m: m.label_components(mask),
        "best_alignment 20^3 shift 2": lambda m: m.best_alignment(pred, truth, 2, PERMUTATIONS),
        "svm_dual_cd 200x7168": lambda m: m.svm_dual_cd(X, y, up, 50, 1e-6),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        times = {}
        for label, impl in (("numpy", kernels.numpy_impl), ("numba", kernels.numba_impl)):
            fn(impl)
            times[label] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        print(f"{name:32s} {times['numpy']:10.4f} {times['numba']:10.4f} {times['numpy'] / times['numba']:7.1f}x")


if __name__ == "__main__":
    main()
