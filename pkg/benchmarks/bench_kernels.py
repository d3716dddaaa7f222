"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--number 200]

Prints one ``kernel,shape,backend,usec_per_call`` row per measurement and a
speedup column when both backends are available.
"""

import argparse
import timeit

import numpy as np

from gcdg.kernels import backends
from gcdg.numerics import make_rng

# (N, C, K, D): a training batch of the ring2d protocol and a larger one
SHAPES = [(64, 3, 2, 8), (256, 4, 3, 8)]


def cases(shape, rng):
    N, C, K, D = shape
    Z = rng.standard_normal((N, D))
    M = rng.standard_normal((C, K, D))
    LV = 0.3 * rng.standard_normal((C, K, D))
    U = rng.standard_normal((N, C, K))
    Q = np.exp(-rng.random((N // C, K)))
    return {
        "log_density": lambda m: m.log_density(Z, M, LV),
        "density_backward": lambda m: m.density_backward(Z, M, LV, U),
        "sinkhorn_scale": lambda m: m.sinkhorn_scale(Q, Q.shape[0] / K, 3),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=200)
    args = p.parse_args(argv)
    mods = backends()
    print("kernel,shape,backend,usec_per_call,speedup_vs_numpy")
    for shape in SHAPES:
        for name, call in cases(shape, make_rng(0)).items():
            times = {}
            for backend, mod in mods.items():
                best = min(timeit.repeat(lambda: call(mod), repeat=args.repeat, number=args.number))
                times[backend] = 1e6 * best / args.number
            for backend, usec in times.items():
                speedup = times["numpy"] / usec
                print(f"{name},{'x'.join(map(str, shape))},{backend},{usec:.2f},{speedup:.2f}")


if __name__ == "__main__":
    main()
