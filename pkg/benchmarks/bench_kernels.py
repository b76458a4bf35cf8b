"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-repeat wall time for each
backend and the speedup.  Inputs come from a seeded generated scenario so
runs are comparable across machines.
"""

import argparse
import timeit

import numpy as np

from adoptnet import _kernels_py
from adoptnet.experiments import generate_scenario

try:
    from adoptnet import _ckernels
except ImportError:
    _ckernels = None


def cases(n=10, T=1000, horizon=10):
    sc = generate_scenario(42, n)
    pack = sc.packed
    st = sc.initial
    a, d, x = st.a.copy(), st.d.copy(), st.x.copy()
    rng = np.random.default_rng(0)
    U = np.ascontiguousarray(rng.uniform(0, 0.05, (T, n)))
    Uh = np.ascontiguousarray(U[:horizon])
    qa, qd, l = np.ones(n), np.ones(n), np.full(n, 0.1)
    target = np.ascontiguousarray(np.stack([a, d, x]))
    V = np.ascontiguousarray(rng.uniform(-0.5, 1.5, (1000, n)))
    upper = 1.0 - sc.params.prejudice
    return {
        f"rollout (n={n}, T={T})": lambda k: k.rollout(*pack, a, d, x, U, T),
        f"fixed_point (n={n})": lambda k: k.fixed_point(*pack, a, d, x, 1e-10, 1_000_000, 1 / 64),
        f"horizon_cost_grad (N={horizon})": lambda k: k.horizon_cost_grad(
            *pack, a, d, x, Uh, qa, qd, l, 10.0, target, True, True),
        "project_rows (1000 rows)": lambda k: k.project_rows(V, upper, 1.0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("-n", type=int, default=10)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the numpy backend is timed")
    print(f"{'kernel':34s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases(args.n).items():
        def best(k):
            timer = timeit.Timer(lambda: fn(k))
            loops, _ = timer.autorange()
            return min(timer.repeat(args.repeat, loops)) / loops * 1e3
        py = best(_kernels_py)
        if _ckernels is None:
            print(f"{name:34s} {py:12.4f} {'-':>12s} {'-':>8s}")
            continue
        cy = best(_ckernels)
        print(f"{name:34s} {py:12.4f} {cy:12.4f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
