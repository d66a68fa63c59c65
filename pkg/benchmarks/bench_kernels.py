"""Compare the compiled and pure-numpy random-number kernels.

Usage: python benchmarks/bench_kernels.py [--lanes N] [--repeat R]

Both backends are imported directly, checked for bit-identical Philox words,
then timed on the shapes the samplers use (lanes x components x classes).  The
"normal_fill" rows include the shared Box-Muller transform, so they show the
end-to-end speedup seen by the samplers.
"""

import argparse
import timeit

import numpy as np

from catbsi import _kernels_py, kernels

try:
    from catbsi import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lanes", type=int, default=10_000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    backends = {"python": _kernels_py}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled kernels not built; timing the numpy fallback only")

    lanes = np.arange(args.lanes)
    def words(m, lanes, comps, c):
        return m.counter_words(7, 32, 3, lanes, comps, (c + 3) // 4)

    def normal(m, lanes, comps, c):
        return kernels.normal_fill(7, 32, 3, lanes, comps, c, backend=m)

    def uniform(m, lanes, comps, c):
        return kernels.uniform_fill(7, 32, 3, lanes, comps, c, backend=m)

    fns = {"counter_words": words, "normal_fill": normal, "uniform_fill": uniform}
    cases = [("counter_words", 3, 45), ("normal_fill", 3, 1), ("normal_fill", 2, 6),
             ("normal_fill", 2, 45), ("uniform_fill", 1, 45)]
    print(f"{'kernel':<14}{'shape':>18}" + "".join(f"{b:>12}" for b in backends) + "   speedup")
    for name, c, n in cases:
        comps = np.arange(n)
        fn = fns[name]
        outs = {b: fn(m, lanes, comps, c) for b, m in backends.items()}
        if len(outs) == 2:
            assert np.array_equal(outs["python"], outs["cython"]), f"{name} backends disagree"
        times = {b: bench(lambda m=m: fn(m, lanes, comps, c), args.repeat)
                 for b, m in backends.items()}
        shape = f"{args.lanes}x{n}x{c}"
        speed = f"{times['python'] / times['cython']:9.2f}x" if len(times) == 2 else ""
        print(f"{name:<14}{shape:>18}" + "".join(f"{1e3 * t:10.2f}ms" for t in times.values())
              + speed)


if __name__ == "__main__":
    main()
