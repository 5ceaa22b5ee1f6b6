"""Time the numba and numpy kernels on the same batch of streams.

    python benchmarks/bench_backends.py [--streams 1000] [--length 500] [--repeat 5]

Also checks that both backends return identical arrays.
"""

import argparse
import time

import numpy as np

from onlinefdr import kernels
from onlinefdr.simulate import batch_schedule


def _call(name, p, spec, backend):
    n = p.shape[1]
    pi = np.full(n, 0.1)
    if name == "lord":
        return kernels.lord(p, 0.05, pi, None, backend)
    if name == "saffron":
        return kernels.saffron(p, 0.05, pi, 0.5, False, None, backend)
    if name == "alpha-investing":
        return kernels.alpha_investing(p, 0.05, pi, None, backend)
    if name == "planned-lord":
        return kernels.planned_lord(p, spec, 0.05, pi, None, backend)
    return kernels.planned_saffron(p, spec, 0.05, pi, np.full(n, 0.5), None, backend)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--streams", type=int, default=1000)
    ap.add_argument("--length", type=int, default=500)
    ap.add_argument("--n-batch", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    p = np.where(rng.random((args.streams, args.length)) < 0.2,
                 rng.random((args.streams, args.length)) * 1e-3,
                 rng.random((args.streams, args.length)))
    spec = np.asarray(batch_schedule(args.length, args.n_batch).spec_time)
    backends = kernels.available_backends()
    print(f"{args.streams} streams x {args.length} stages, best of {args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name in ("lord", "saffron", "alpha-investing", "planned-lord", "planned-saffron"):
        for b in backends:
            _call(name, p[:2], spec, b)  # compile / warm up
        secs = [best_of(lambda b=b: _call(name, p, spec, b), args.repeat) for b in backends]
        line = f"{name:<18}" + "".join(f"{s * 1e3:>10.2f}ms" for s in secs)
        if len(backends) > 1:
            same = all(np.array_equal(x, y) for x, y in zip(_call(name, p, spec, "numba").values(),
                                                              _call(name, p, spec, "numpy").values()))
            line += f"{secs[1] / secs[0]:>11.1f}x" + ("" if same else "  MISMATCH")
        print(line)


if __name__ == "__main__":
    main()
