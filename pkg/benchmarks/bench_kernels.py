"""Wall-clock comparison of the compiled and numpy kernel paths.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Each kernel is
called once untimed to trigger compilation, then timed over ``repeat`` calls;
the outputs of both paths are compared before anything is reported.
"""

import argparse
import time

import numpy as np

from alloylab import _kernels as k
from alloylab.model import cube_points
from alloylab.toeplitz import linear_extension, toeplitz_matrix


def _best(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng):
    n = 2000
    diag = rng.uniform(-0.5, 3.0, n)
    off2 = np.full(n - 1, 1.0)
    energies = np.linspace(-1.0, 5.0, 400)
    yield "sturm_count n=2000 x 400 energies", k.sturm_count_numba, k.sturm_count_numpy, (diag, off2, energies)

    a = np.array([[1.0, -0.3], [0.2, 0.1]])
    pts = cube_points(-1, 18, 2)
    A = toeplitz_matrix(a, pts)
    order = linear_extension(pts)
    yield "cone_substitution |Lambda+|=400 (d=2)", k.cone_substitution_numba, k.cone_substitution_numpy, (A, order)

    base = rng.uniform(-1.0, 2.0, (200_000, 4))
    direction = np.array([0.5, -0.3, 0.2, -0.1])
    yield "shear_feasible 2e5 points n=4", k.shear_feasible_numba, k.shear_feasible_numpy, (base, direction, 1.0, 0.0, 1.0)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not k.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, fast, slow, inputs in _cases(rng):
        out_fast, out_slow = fast(*inputs), slow(*inputs)
        if not isinstance(out_fast, tuple):
            out_fast, out_slow = (out_fast,), (out_slow,)
        for x, y in zip(out_fast, out_slow):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
        t_fast = _best(fast, inputs, args.repeat)
        t_slow = _best(slow, inputs, args.repeat)
        print(f"{name:42s} {1e3 * t_fast:11.2f} {1e3 * t_slow:11.2f} {t_slow / t_fast:8.1f}x")


if __name__ == "__main__":
    main()
