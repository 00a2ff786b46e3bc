"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-``repeat`` time per call for each kernel and backend and
checks that both backends return identical results on the benchmark inputs.
"""
import argparse
import timeit

import numpy as np

from popsignal._kernels import _pure

try:
    from popsignal._kernels import _ckernels
except ImportError:
    _ckernels = None


def workloads(rng):
    a, b = rng.random(52), rng.random(52)
    w = rng.standard_normal(200)
    y = rng.random(52) * 10
    return {
        "edit_distance(52x52)": lambda m: m.edit_distance(a, b, 0.03),
        "css_residuals(n=200, p=2, q=2)": lambda m: m.css_residuals(w, 0.1, np.array([0.5, -0.2]),
                                                                    np.array([0.3, 0.1])),
        "ses_sse(n=52)": lambda m: m.ses_sse(y, 0.3),
    }


def best_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = {"python": _pure}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the Python fallback only")

    print(f"{'kernel':<32}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for name, call in workloads(np.random.default_rng(args.seed)).items():
        results = [call(m) for m in backends.values()]
        for r in results[1:]:
            assert np.array_equal(np.asarray(r), np.asarray(results[0])), f"{name}: backends disagree"
        times = {b: best_time(lambda m=m: call(m), args.repeat) for b, m in backends.items()}
        line = f"{name:<32}" + "".join(f"{1e6 * t:>12.1f}us" for t in times.values())
        if "cython" in times:
            line += f"{times['python'] / times['cython']:>9.0f}x"
        print(line)


if __name__ == "__main__":
    main()
