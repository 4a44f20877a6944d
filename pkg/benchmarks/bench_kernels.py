"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The first numba call per kernel is excluded (JIT compile / cache load).
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from bridgelab._kernels import _numpy

try:
    from bridgelab._kernels import _numba
except ImportError:  # numba unavailable
    _numba = None


def cases(rng: np.random.Generator) -> dict[str, tuple]:
    theta = rng.standard_normal((16, 15))
    return {
        "gram 64x64x4096": ("gram", rng.standard_normal((64, 4096)), rng.standard_normal((64, 4096))),
        "rowdots 256x8192": ("rowdots", rng.standard_normal((256, 8192)), rng.standard_normal((256, 8192))),
        "sample 4096x8": ("sample_sequences", theta, 3, rng.random((4096, 8)), 1.0, 14),
        "seq_grad len 64": ("seq_grad", theta, rng.integers(0, 16, 64), rng.integers(0, 15, 64)),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rows = []
    for label, (name, *inputs) in cases(np.random.default_rng(args.seed)).items():
        row = [label]
        for mod in (_numpy, _numba):
            if mod is None:
                row.append(float("nan"))
                continue
            fn = getattr(mod, name)
            fn(*inputs)
            t = min(timeit.repeat(lambda: fn(*inputs), number=1, repeat=args.repeat))
            row.append(t * 1e3)
        rows.append(row)
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for label, a, b in rows:
        print(f"{label:<20}{a:>12.3f}{b:>12.3f}{a / b:>10.1f}x")


if __name__ == "__main__":
    main()
