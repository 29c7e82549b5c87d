"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from topicflow import _kernels as K


def cases(rng):
    a, b = rng.integers(0, 50, 120), rng.integers(0, 50, 100)
    doc = rng.integers(-1, 10, 5000)
    return {
        "lcs 120x100": lambda impl: impl.lcs_length(a, b),
        "windows 5000 tok, 10 words, w=110": lambda impl: impl.window_cooccurrence(doc, 10, 110),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if K.compiled is None:
        print("compiled kernels are not built; only the Python fallback is timed")
    impls = {"python": K.python, "cython": K.compiled}
    print(f"{'kernel':<36}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for label, impl in impls.items():
            if impl is None:
                continue
            times[label] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) * 1e3
        fast = times.get("cython")
        speed = f"{times['python'] / fast:9.1f}x" if fast else "        -"
        cy = f"{fast:12.2f}" if fast else f"{'-':>12}"
        print(f"{name:<36}{times['python']:12.2f}{cy}{speed}")


if __name__ == "__main__":
    main()
