"""Time the compiled cosine-model kernels against the numpy reference.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

Runs cosine_model_predict and cosine_model_loss_grad on a few matrix sizes
typical for this pipeline (samples x proteins) and prints the per-call time
of each backend plus the speedup. The compiled extension must be built for
the comparison; otherwise only the reference is timed.
"""

import argparse
import math
import sys
import time

import numpy as np

from chrononet._kernels import _reference

try:
    from chrononet._kernels import _core
except ImportError:
    _core = None

SIZES = [(24, 400), (24, 2000), (100, 2000), (250, 5000)]


def make_instance(m, n, seed=0):
    rng = np.random.default_rng(seed)
    return (
        rng.normal(0.0, 1.0, (m, n)),
        rng.uniform(0.0, 2.0 * math.pi, m),
        rng.normal(0.0, 0.5, n),
        rng.uniform(0.2, 2.0, n),
        rng.uniform(0.0, 2.0 * math.pi, n),
        np.full(n, 1.0),
    )


def best_of(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args(argv)

    if _core is None:
        print("compiled extension not built; timing the numpy reference only",
              file=sys.stderr)

    header = f"{'kernel':<10} {'m x n':>12} {'numpy':>12} {'compiled':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for m, n in SIZES:
        x, phases, L, A, phi, omega = make_instance(m, n)
        jobs = {
            "predict": lambda impl: impl.cosine_model_predict(phases, L, A, phi, omega),
            "loss_grad": lambda impl: impl.cosine_model_loss_grad(
                x, phases, L, A, phi, omega, 1.0
            ),
        }
        for name, job in jobs.items():
            t_ref = best_of(lambda: job(_reference), args.repeats)
            if _core is not None:
                t_core = best_of(lambda: job(_core), args.repeats)
                print(f"{name:<10} {f'{m} x {n}':>12} {t_ref * 1e3:>10.3f}ms "
                      f"{t_core * 1e3:>10.3f}ms {t_ref / t_core:>8.2f}x")
            else:
                print(f"{name:<10} {f'{m} x {n}':>12} {t_ref * 1e3:>10.3f}ms "
                      f"{'-':>12} {'-':>9}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
