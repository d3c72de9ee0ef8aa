"""Compare the compiled and numpy generation kernels.

Usage: python3 benchmarks/bench_kernels.py [--n 10 12 14] [--replicas 200]

For each depth, grows the same replicas (same seeds) with both backends,
checks that the outputs agree, and prints wall time per replica. A second
table times ``expand_generation`` alone on one large generation.
"""

import argparse
import time

import numpy as np

from heavybrw.branching import BranchingModel, OffspringLaw
from heavybrw.displacement import DisplacementModel, IidAxes, light_pareto, two_sided_pareto
from heavybrw.kernels import BACKENDS
from heavybrw.rng import stream
from heavybrw.simulator import GenerationState, SimulationSetup, run_replica, step_generation


def two_type_models():
    row = [((1, 1), 0.9), ((1, 2), 0.1)]
    bm = BranchingModel(OffspringLaw.table([row, row]))
    dm = DisplacementModel((light_pareto(1.5),), IidAxes(two_sided_pareto(0.5, 0.5)))
    return bm, dm


def time_replicas(backend, n, replicas, seed=1):
    bm, dm = two_type_models()
    setup = SimulationSetup(bm, dm, backend=backend)
    t0 = time.perf_counter()
    out = [run_replica(setup, n, stream(seed, "bench", n, i)) for i in range(replicas)]
    return time.perf_counter() - t0, out


def time_expand(backend, size, repeat=5, seed=2):
    bm, dm = two_type_models()
    rng = stream(seed, "expand")
    Q = bm.Q
    state = GenerationState(
        generation=10,
        types=rng.integers(0, Q, size),
        positions=rng.standard_normal(size),
        last_event=np.full(size, -1, dtype=np.int64),
        exceed=np.zeros((size, Q), dtype=np.int32),
    )
    from heavybrw.simulator import StepThresholds
    thr = StepThresholds(record=5.0, exceed=2.0, population_cap=10 * size)
    best = np.inf
    for r in range(repeat):
        t0 = time.perf_counter()
        step_generation(state, bm, dm, thr, stream(seed, "step", r), backend)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[10, 12, 14])
    ap.add_argument("--replicas", type=int, default=200)
    args = ap.parse_args()
    names = sorted(BACKENDS)
    if "cython" not in names:
        print("compiled backend not built; only the numpy fallback is available")
    print(f"{'n':>3} " + " ".join(f"{b + ' ms/rep':>16}" for b in names) + "   speedup  agree")
    for n in args.n:
        times, outs = {}, {}
        for b in names:
            times[b], outs[b] = time_replicas(b, n, args.replicas)
        agree = True
        if len(names) == 2:
            for a, c in zip(outs["python"], outs["cython"]):
                # libm and numpy powers may differ in the last ulp
                scale = np.abs(a.points.locations).max()
                agree &= (a.total == c.total and np.allclose(a.points.locations, c.points.locations,
                                                               rtol=0.0, atol=1e-12 * scale)
                          and np.array_equal(a.tilde.multiplicities, c.tilde.multiplicities))
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        cells = " ".join(f"{1e3 * times[b] / args.replicas:16.3f}" for b in names)
        print(f"{n:>3} {cells}   {speed:7.2f}  {agree}")
    print()
    print(f"{'particles':>10} " + " ".join(f"{b + ' ms/step':>17}" for b in names))
    for size in (10_000, 100_000, 1_000_000):
        cells = " ".join(f"{1e3 * time_expand(b, size):17.2f}" for b in names)
        print(f"{size:>10} {cells}")


if __name__ == "__main__":
    main()
