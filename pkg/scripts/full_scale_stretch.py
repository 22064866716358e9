"""Train codebooks for a large rule table with the frozen RNN (not run in CI).

    python3 scripts/full_scale_stretch.py --rules path/to/universal.rules --out stretch.csv

Without ``--rules`` the full (unreduced) compiled 3-state busy beaver is
used, 2295 rules over 95 symbols.  Expect hours of CPU per seed at d=64.
Rows are appended to the CSV as each seed finishes, so a long run can be
interrupted and inspected.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

from lagsim.backends import make_backend
from lagsim.compiler import compile_machine
from lagsim.lag import check_reference_stats, load_system
from lagsim.tm import load_tm
from lagsim.trainer import TrainConfig, train_codebook

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "lagsim" / "fixtures" / "busy_beaver3.tm"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rules", help="rule file (alphabet sidecar <rules>.json is picked up if present)")
    ap.add_argument("--arch", default="rnn", choices=["rnn", "attention"])
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--max-iterations", type=int, default=20000)
    ap.add_argument("--step-size", type=float, default=TrainConfig.step_size)
    ap.add_argument("--out", default="stretch.csv")
    args = ap.parse_args()

    system = load_system(args.rules) if args.rules else compile_machine(load_tm(FIXTURE)).system
    print(f"system: {system.stats()}")
    print(f"reference comparison: {check_reference_stats(system)}")
    out = Path(args.out)
    new = not out.exists()
    with out.open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["arch", "d", "seed", "rules", "success", "iterations", "log_time_metric", "wall_seconds"])
        for seed in args.seeds:
            t0 = time.perf_counter()
            cfg = TrainConfig(seed=seed, step_size=args.step_size, max_iterations=args.max_iterations)
            res = train_codebook(make_backend(args.arch, args.d, seed), system, cfg)
            row = [args.arch, args.d, seed, len(system), res.success, res.iterations_to_universality,
                   f"{res.log_time_metric:.6f}", f"{time.perf_counter() - t0:.1f}"]
            w.writerow(row)
            fh.flush()
            print(" ".join(map(str, row)), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
