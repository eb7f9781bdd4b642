"""Compare the numba-compiled kernels with their numpy counterparts.

Kernel timings run in-process (both forms are importable side by side).
The end-to-end timing runs one Study-1 replication in a fresh interpreter
per backend, toggled with ODECHECK_DISABLE_NUMBA.

    python3 benchmarks/bench_backends.py [--n 300] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from odecheck import kernels
from odecheck._accel import USE_NUMBA
from odecheck.gof import quadruple_blocks


def best_of(fn, repeat):
    fn()  # warm-up (compilation for numba)
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def kernel_cases(n, rng):
    t = np.sort(rng.uniform(size=n))
    e = rng.standard_normal((n, 2))
    y = rng.standard_normal(n)
    f = rng.standard_normal(n)
    te = np.linspace(0.05, 0.95, 4 * n)
    half = n // 2
    blocks = quadruple_blocks(half, "random", seed=1)
    return [
        ("pair_sums", lambda: kernels.pair_sums_loops(t, e, 0.05), lambda: kernels.pair_sums_numpy(t, e, 0.05)),
        (
            "local_moments",
            lambda: kernels.local_moments_loops(te, t, e, 0.1, 2),
            lambda: kernels.local_moments_numpy(te, t, e, 0.1, 2),
        ),
        ("gm_vnf", lambda: kernels.gm_vnf_loops(t, y, f, 0.8), lambda: kernels.gm_vnf_numpy(t, y, f, 0.8)),
        (
            "gm_what",
            lambda: kernels.gm_what_loops(t[:half], y[:half], f[:half], 0.8, blocks, kernels.PERMUTATIONS_5),
            lambda: kernels.gm_what_numpy(t[:half], y[:half], f[:half], 0.8, blocks, kernels.PERMUTATIONS_5),
        ),
    ]


REPLICATION = (
    "import time; from odecheck.simulation import StudySpec, run_replication;"
    "spec = StudySpec(n={n}); run_replication(spec, 0); s = time.perf_counter();"
    "[run_replication(spec, r) for r in range(1, {reps} + 1)];"
    "print((time.perf_counter() - s) / {reps})"
)


def replication_seconds(disable, n, reps):
    env = dict(os.environ, ODECHECK_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run(
        [sys.executable, "-c", REPLICATION.format(n=n, reps=reps)], env=env, capture_output=True, text=True, check=True
    )
    return float(out.stdout.strip())


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=300)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--reps", type=int, default=3, help="replications for the end-to-end timing")
    args = parser.parse_args(argv)
    if not USE_NUMBA:
        print("numba backend disabled; loop kernels run as plain Python", file=sys.stderr)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, loops, vec in kernel_cases(args.n, rng):
        a = best_of(loops, args.repeat) * 1e3
        b = best_of(vec, args.repeat) * 1e3
        print(f"{name:<16}{a:>12.3f}{b:>12.3f}{b / a:>10.1f}")
    fast = replication_seconds(False, args.n, args.reps)
    slow = replication_seconds(True, args.n, args.reps)
    print(f"{'replication':<16}{fast * 1e3:>12.1f}{slow * 1e3:>12.1f}{slow / fast:>10.1f}")


if __name__ == "__main__":
    main()
