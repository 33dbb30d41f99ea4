"""Time the compiled pair-sum core against the numpy fallback.

    python benchmarks/bench_pairsum.py [--paths M] [--steps N] [--repeat R]

Both implementations receive the same Brownian batch; the script checks that
they agree before reporting timings and the speedup.
"""
import argparse
import time

import numpy as np

from pamfk import _pairsum_py
from pamfk.kernel import MollifierKernel, pair_profile
from pamfk.paths import sample_batch

try:
    from pamfk import _pairsum
except ImportError:  # extension not built
    _pairsum = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=64)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--eps", type=float, default=0.2)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    P = sample_batch(2, 1.0, args.steps, 0, np.arange(args.paths))
    Q = sample_batch(2, 1.0, args.steps, 1, np.arange(args.paths))
    pts = args.steps + 1
    counts = {"tri": args.paths * pts * (pts - 1) / 2, "rect": args.paths * pts * pts}
    print(f"{args.paths} paths x {args.steps} steps, eps = {args.eps}")
    print(f"{'kernel':8s} {'sum':5s} {'backend':9s} {'seconds':>9s} {'ns/pair':>8s} {'speedup':>8s}")
    for name, k in [("gaussian", MollifierKernel()), ("bump", MollifierKernel("bump", 2))]:
        prof = pair_profile(k, args.eps)
        cases = {
            "tri": lambda m: m.tri_sum_batch(P, prof.kind, prof.coef, prof.table),
            "rect": lambda m: m.rect_sum_batch(P, Q, prof.kind, prof.coef, prof.table),
        }
        for label, call in cases.items():
            t_py, ref = best_of(lambda: call(_pairsum_py), args.repeat)
            n = counts[label]
            print(f"{name:8s} {label:5s} {'python':9s} {t_py:9.3f} {1e9 * t_py / n:8.2f} {'':>8s}")
            if _pairsum is None:
                continue
            t_c, out = best_of(lambda: call(_pairsum), args.repeat)
            err = np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1e-300))
            if err > 1e-6:
                raise SystemExit(f"backends disagree: max relative difference {err:.2e}")
            print(f"{name:8s} {label:5s} {'compiled':9s} {t_c:9.3f} {1e9 * t_c / n:8.2f} "
                  f"{t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
