"""Per-sweep solver time of the numba and pure-numpy kernels.

Usage::

    python benchmarks/bench_backends.py [--sizes 4x5 10x20 20x20] [--sweeps 10]

Each case solves the same hybrid problem from the same initialization with
both backends for a fixed number of sweeps (the cache build is excluded) and
reports the median time per sweep and the speed-up.
"""
import argparse
import statistics

from civa import kernels
from civa.core import random_init
from civa.hybrid import HybridConfig, generate_hybrid
from civa.iva_g import SolverSettings
from civa.solver import make_problem, solve


def time_backend(problem, variant, backend, sweeps, repeats):
    N, K, _ = problem.dims
    init = random_init(N, K, 0)
    settings = SolverSettings(max_iters=sweeps, tol=1e-300)
    solve(variant, problem, init=init, settings=settings, backend=backend)  # warm-up / JIT
    return statistics.median(
        solve(variant, problem, init=init, settings=settings, backend=backend).time_per_iter
        for _ in range(repeats)
    )


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", nargs="+", default=["4x5", "10x10", "10x20", "20x20"], help="NxK pairs")
    p.add_argument("--variants", nargs="+", default=["iva-g-v", "ar-civa", "tf-civa"])
    p.add_argument("--V", type=int, default=5000)
    p.add_argument("--sweeps", type=int, default=10)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)
    if not kernels.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    print(f"{'N':>3} {'K':>3} {'variant':<9} {'numba ms':>9} {'numpy ms':>9} {'speed-up':>8}")
    for size in args.sizes:
        N, K = (int(x) for x in size.lower().split("x"))
        data, _, refs = generate_hybrid(HybridConfig(N=N, K=K, V=args.V, seed=0))
        problem = make_problem(data, refs)
        for variant in args.variants:
            t_nb = time_backend(problem, variant, "numba", args.sweeps, args.repeats)
            t_np = time_backend(problem, variant, "numpy", args.sweeps, args.repeats)
            print(f"{N:>3} {K:>3} {variant:<9} {t_nb * 1e3:9.3f} {t_np * 1e3:9.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
