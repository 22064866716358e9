"""Verify a rule table against a hosted chat model (not run in CI).

    export LAGSIM_API_KEY=...
    python3 scripts/hosted_verify.py --config remote.toml --rules out/increment.rules --prompt prompt.txt

``remote.toml`` holds a ``[remote]`` table with at least ``endpoint`` and
``model``.  Responses are cached under ``cache_dir``, so a rerun costs no
requests and reproduces the report.  Success here means the pipeline
completed and the report is intact; how many rules pass depends on the
model.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from lagsim.backends import RemoteChatBackend, RemoteConfig
from lagsim.core import build_pair_codebook
from lagsim.lag import load_system
from lagsim.verification import verify_rules


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--rules", required=True)
    ap.add_argument("--prompt", help="system prompt file, whitespace-separated tokens")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="hosted_verification.json")
    args = ap.parse_args()

    system = load_system(args.rules)
    n_tokens = max(2, math.isqrt(len(system.alphabet) - 1) + 1)
    codebook = build_pair_codebook(system.alphabet, [f"t{i}" for i in range(n_tokens)])
    prompt = tuple(Path(args.prompt).read_text(encoding="utf-8").split()) if args.prompt else ()
    backend = RemoteChatBackend(RemoteConfig.from_toml(args.config), prompt)
    report = verify_rules(backend, codebook, prompt, system, workers=args.workers)
    Path(args.out).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    s = report.summary
    print(f"passed {s['passed']}/{s['total']}; network calls {backend.network_calls}; report {args.out}")
    return 0 if s["total"] == len(system.table) else 1


if __name__ == "__main__":
    sys.exit(main())
