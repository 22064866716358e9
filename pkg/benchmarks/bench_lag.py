"""Compiled Lag kernel vs the pure-Python fallback.

    python3 benchmarks/bench_lag.py --steps 1000000

Both kernels run the same system from the same input; the traces are
checked for equality before timings are reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lagsim import _lagkernel_py, lag
from lagsim.compiler import compile_machine
from lagsim.core import Alphabet
from lagsim.tm import initial_config, parse_tm

try:
    from lagsim import _lagkernel
except ImportError:
    _lagkernel = None

# A 2-state, 2-symbol machine that never halts: it sweeps right forever,
# so the compiled system runs for as many steps as asked.
SWEEPER = """
states: a b
alphabet: 0 1
blank: 0
start: a
a 0 -> 1 R b
a 1 -> 0 R b
b 0 -> 0 R a
b 1 -> 1 R a
"""


def random_system(n: int, seed: int) -> lag.LagSystem:
    rng = np.random.default_rng(seed)
    alpha = Alphabet([f"x{i}" for i in range(n)] + ["!h"], "!h")
    rules = [
        lag.ProductionRule((a, b), tuple(int(x) for x in rng.integers(0, n, 1 + (rng.random() < 0.3))))
        for a in range(n) for b in range(n)
    ]
    return lag.LagSystem(alpha, rules)


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(name: str, system: lag.LagSystem, word, steps: int, repeat: int) -> None:
    results = {}
    traces = {}
    kernels = [("python", _lagkernel_py)]
    if _lagkernel is not None:
        kernels.insert(0, ("compiled", _lagkernel))
    for label, mod in kernels:
        lag._kernel = mod
        traces[label] = lag.run(system, word, steps)
        results[label] = best_of(lambda: lag.run(system, word, steps), repeat)
    if len(traces) == 2:
        a, b = traces["compiled"], traces["python"]
        assert a.halt == b.halt and np.array_equal(a.lengths, b.lengths)
    done = traces["python"].steps
    line = f"{name:<28} steps={done:>9}"
    for label, t in results.items():
        line += f"  {label}={t:8.3f}s ({done / t / 1e6:6.2f} M steps/s)"
    if len(results) == 2:
        line += f"  speedup={results['python'] / results['compiled']:.1f}x"
    print(line)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _lagkernel is None:
        print("compiled kernel not built; timing the Python fallback only")

    comp = compile_machine(parse_tm(SWEEPER))
    s0 = comp.encode_config(initial_config(comp.machine, "0110"))
    bench("compiled TM (sweeper)", comp.system, s0, args.steps, args.repeat)
    sys_r = random_system(40, 0)
    bench("random 40-symbol system", sys_r, tuple(range(10)), args.steps, args.repeat)
    lag._kernel = _lagkernel or _lagkernel_py


if __name__ == "__main__":
    main()
