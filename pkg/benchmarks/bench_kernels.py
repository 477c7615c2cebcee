"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 64]

Prints the best-of-``repeat`` wall time per call for each backend, the
speed-up, and the largest absolute difference between the two outputs.
"""

import argparse
import timeit

import numpy as np

from invkit.kernels import get_backend
from invkit.operators import default_detectors


def cases(size):
    rng = np.random.default_rng(0)
    img = rng.random((size, size))
    n_angles = size
    n_det = default_detectors((size, size))
    sino = rng.random((n_angles, n_det))
    return {
        "radon_forward": lambda k: k.radon_forward(img, n_angles, n_det),
        "radon_adjoint": lambda k: k.radon_adjoint(sino, size, size),
        "tv_prox": lambda k: k.tv_prox(img, 0.1, 50),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args()
    py = get_backend("python")
    try:
        cy = get_backend("cython")
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        return
    print(f"{'kernel':<15}{'cython ms':>12}{'python ms':>12}{'speed-up':>10}{'max |diff|':>14}")
    for name, fn in cases(args.size).items():
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        diff = float(np.max(np.abs(np.asarray(fn(cy)) - np.asarray(fn(py)))))
        print(f"{name:<15}{t_cy:>12.3f}{t_py:>12.3f}{t_py / t_cy:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
