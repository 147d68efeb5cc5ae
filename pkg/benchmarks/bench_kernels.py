"""Time the compiled and pure-Python Lindblad right-hand sides.

Usage: python3 benchmarks/bench_kernels.py [--repeat R] [--dims 62 248 992]

Both backends are applied to the same random sparse generator and state;
the script prints seconds per evaluation and the largest disagreement.
"""
import argparse
import time

import numpy as np
import scipy.sparse as sp

from darkcool import kernels
from darkcool.qops import HilbertSpace, Liouvillian, QOperator


def random_problem(n, n_jumps=10, seed=0):
    rng = np.random.default_rng(seed)
    space = HilbertSpace.of(("x", n))
    a = sp.random(n, n, density=min(1.0, 8 / n), random_state=seed, dtype=complex)
    h = QOperator(space, a + a.conj().T, hermitian=True)
    jumps = [QOperator(space, sp.random(n, n, density=min(1.0, 1 / n), random_state=seed + k + 1))
             for k in range(n_jumps)]
    x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = x @ x.conj().T
    return h, jumps, rho / np.trace(rho)


def timeit(f, repeat):
    f()
    t = time.perf_counter()
    for _ in range(repeat):
        f()
    return (time.perf_counter() - t) / repeat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs="+", default=[62, 248, 992])
    ap.add_argument("--repeat", type=int, default=10)
    args = ap.parse_args()

    have_compiled = kernels.compiled_available()
    print(f"compiled extension available: {have_compiled}")
    print(f"{'dim':>6} {'python [s]':>12} {'compiled [s]':>13} {'speed-up':>9} {'max |diff|':>11}")
    for n in args.dims:
        h, jumps, rho = random_problem(n)
        lp = Liouvillian(h, jumps, backend="python")
        tp = timeit(lambda: lp.rhs(rho), max(1, args.repeat // (1 + n // 300)))
        if have_compiled:
            lc = Liouvillian(h, jumps, backend="compiled")
            tc = timeit(lambda: lc.rhs(rho), max(1, args.repeat // (1 + n // 300)))
            diff = np.max(np.abs(lc.rhs(rho) - lp.rhs(rho)))
            print(f"{n:6d} {tp:12.3e} {tc:13.3e} {tp / tc:9.2f} {diff:11.2e}")
        else:
            print(f"{n:6d} {tp:12.3e} {'n/a':>13} {'n/a':>9} {'n/a':>11}")


if __name__ == "__main__":
    main()
