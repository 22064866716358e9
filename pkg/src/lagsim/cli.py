"""``lagsim`` command line.

Exit codes: 0 success, 1 a check failed (verification, co-simulation,
end-to-end), 2 malformed or missing input.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path
from statistics import mean

from . import __version__
from .core import Alphabet, Codebook, build_pair_codebook, sha256_json
from .errors import LagsimError, ParseError
from .lag import LagSystem, check_reference_stats, load_system, run, validate, write_trace_jsonl

log = logging.getLogger("lagsim")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad or missing user input; reported with exit code 2."""


# -- helpers ------------------------------------------------------------------

def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _file_digest(path: str) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


class Run:
    """Per-invocation identity embedded in every output file."""

    def __init__(self, args: argparse.Namespace, inputs: list[str]):
        settings = {
            k: v for k, v in sorted(vars(args).items())
            if k not in ("func", "out", "workers", "verbose") and not callable(v)
        }
        settings["inputs"] = {p: _file_digest(p) for p in inputs if p}
        self.seed = args.seed
        self.config_hash = sha256_json(settings)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)

    @property
    def stamp(self) -> dict:
        return {"version": __version__, "config_hash": self.config_hash, "seed": self.seed}

    def path(self, name: str) -> Path:
        return self.out / name

    def write_json(self, name: str, obj: dict, metadata: bool = True) -> Path:
        obj = {"run": self.stamp, **obj}
        if metadata:
            obj["metadata"] = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p

    def stamp_jsonl(self, p: Path) -> None:
        """Add the run stamp to the first record of a JSON Lines file."""
        lines = p.read_text(encoding="utf-8").splitlines()
        if lines:
            first = json.loads(lines[0])
            first["run"] = self.stamp
            lines[0] = json.dumps(first)
        p.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _load_system(path: str, sidecar: str | None) -> LagSystem:
    _read_text(path)  # report a missing file as bad input
    if sidecar:
        _read_text(sidecar)
    return load_system(path, sidecar)


def _parse_seeds(text: str) -> list[int]:
    out: list[int] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def _parse_ints(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p.strip()]


def _parse_overrides(specs: list[str] | None, alphabet: Alphabet) -> dict:
    out = {}
    for spec in specs or []:
        toks = spec.split()
        if "->" not in toks or toks.index("->") != 2 or len(toks) < 4:
            raise InputError(f"--corrupt expects 'A B -> C [D]', got {spec!r}")
        out[alphabet.ids(toks[:2])] = alphabet.ids(toks[3:])
    return out


def _tokens(n: int) -> list[str]:
    return [f"t{i}" for i in range(n)]


def _default_token_count(alphabet: Alphabet) -> int:
    return max(2, math.isqrt(len(alphabet) - 1) + 1)


def _load_codebook(args, system: LagSystem) -> Codebook:
    if args.codebook:
        obj = json.loads(_read_text(args.codebook))
        return Codebook.from_json(obj.get("codebook", obj), system.alphabet)
    if args.backend in ("rnn", "attention"):
        raise InputError(f"--codebook is required for the {args.backend} backend")
    n = args.tokens or _default_token_count(system.alphabet)
    return build_pair_codebook(system.alphabet, _tokens(n))


def _load_prompt(args, codebook: Codebook) -> tuple:
    if not args.prompt:
        return ()
    text = _read_text(args.prompt)
    if codebook.kind == "vector_code":
        return tuple(json.loads(text))
    return tuple(text.split())


def _make_backend(args, system: LagSystem, codebook: Codebook, prompt: tuple):
    from .backends import RemoteChatBackend, RemoteConfig, RuleTableBackend, make_backend

    if args.backend == "ruletable":
        over = _parse_overrides(args.corrupt, system.alphabet)
        return RuleTableBackend(system, codebook, prompt, context_window=args.context_window, overrides=over)
    if args.backend == "remote":
        if not args.backend_config:
            raise InputError("--backend-config is required for the remote backend")
        _read_text(args.backend_config)
        return RemoteChatBackend(RemoteConfig.from_toml(args.backend_config), prompt)
    return make_backend(args.backend, codebook.dimension, args.backend_seed, context_window=args.context_window)


# -- subcommands ----------------------------------------------------------------

def cmd_run_tm(args) -> int:
    from .tm import initial_config, parse_tm, tm_run, write_tm_trace_jsonl

    machine = parse_tm(_read_text(args.machine), strict=args.strict)
    run_ = Run(args, [args.machine])
    tape = args.input.split() if " " in args.input else list(args.input)
    trace = tm_run(machine, initial_config(machine, tape, args.head), args.budget)
    p = run_.path("tm_trace.jsonl")
    with p.open("w", encoding="utf-8") as fh:
        write_tm_trace_jsonl(trace, fh)
    run_.stamp_jsonl(p)
    cells, _ = trace.final.tape()
    while cells and cells[0] == machine.blank:
        cells.pop(0)
    while cells and cells[-1] == machine.blank:
        cells.pop()
    sep = "" if all(len(c) == 1 for c in machine.alphabet) else " "
    print(f"steps={trace.steps} halted={str(trace.halted).lower()} tape={sep.join(cells)} state={trace.final.state}")
    return EXIT_OK


def cmd_run_lag(args) -> int:
    system = _load_system(args.rules, args.sidecar)
    run_ = Run(args, [args.rules, args.sidecar])
    problems = validate(system)
    if problems:
        for v in problems:
            print(f"error: {v.message}", file=sys.stderr)
        return EXIT_INPUT
    trace = run(system, system.alphabet.parse_string(args.input), args.budget)
    p = run_.path("lag_trace.jsonl")
    with p.open("w", encoding="utf-8") as fh:
        write_trace_jsonl(trace, fh)
    run_.stamp_jsonl(p)
    print(f"steps={trace.steps} halt={trace.halt.value} final={' '.join(system.alphabet.render(trace.final()))}")
    return EXIT_OK


def cmd_compile(args) -> int:
    from .compiler import compile_machine
    from .tm import initial_config, parse_tm

    machine = parse_tm(_read_text(args.machine), strict=args.strict)
    run_ = Run(args, [args.machine])
    compiled = compile_machine(machine)
    if args.reduce:
        c0 = initial_config(machine, args.input, args.head)
        compiled = compiled.reduce([compiled.encode_config(c0)], args.budget)
    name = args.name or Path(args.machine).stem
    rule_path = run_.path(f"{name}.rules")
    compiled.write(rule_path)
    side = json.loads(Path(f"{rule_path}.json").read_text(encoding="utf-8"))
    run_.write_json(f"{name}.rules.json", side, metadata=False)
    stats = compiled.stats
    print(f"rules={stats['rule_count']} symbols={stats['symbol_count']} two_output={stats['two_output_rule_count']}")
    ref = check_reference_stats(compiled.system)
    print("reference comparison: " + ", ".join(f"{k} {v['actual']} vs {v['expected']}" for k, v in ref.items()))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification import verify_rules

    system = _load_system(args.rules, args.sidecar)
    codebook = _load_codebook(args, system)
    prompt = _load_prompt(args, codebook)
    run_ = Run(args, [args.rules, args.sidecar, args.codebook, args.prompt, args.backend_config])
    model = _make_backend(args, system, codebook, prompt)
    report = verify_rules(model, codebook, prompt, system, workers=args.workers)
    body = report.to_json(full=args.format == "full")
    body.pop("metadata")
    run_.write_json("verification.json", body)
    s = report.summary
    print(f"passed {s['passed']}/{s['total']}")
    for v in report.failures()[:20]:
        print(f"  FAIL {' '.join(v.lhs)} expected {' '.join(v.expected)} observed "
              f"{' '.join(v.observed) if v.observed else '-'} ({v.failure_kind})")
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_cosim(args) -> int:
    from .verification import cosimulate

    system = _load_system(args.rules, args.sidecar)
    codebook = _load_codebook(args, system)
    prompt = _load_prompt(args, codebook)
    run_ = Run(args, [args.rules, args.sidecar, args.codebook, args.prompt, args.backend_config])
    model = _make_backend(args, system, codebook, prompt)
    rep = cosimulate(model, codebook, prompt, system, system.alphabet.parse_string(args.input), args.steps)
    run_.write_json("cosim.json", rep.to_json(), metadata=False)
    if rep.agreed:
        model_stop = "model stopped too" if rep.halt_agreed else f"model: {rep.model_halt}"
        print(f"agreed for {rep.steps} steps (engine: {rep.lag_halt}; {model_stop})")
        return EXIT_OK
    print(f"diverged at step {rep.divergence_step} (rule {' '.join(rep.rule or [])})")
    return EXIT_FAIL


def _train_config(args):
    from .trainer import TrainConfig

    base = {}
    if args.config:
        _read_text(args.config)
        base = TrainConfig.from_toml(args.config).__dict__.copy()
    if args.max_iterations is not None:
        base["max_iterations"] = args.max_iterations
    base["seed"] = args.seed
    return TrainConfig.from_dict(base)


def cmd_train(args) -> int:
    from .backends import make_backend
    from .trainer import train_codebook

    system = _load_system(args.rules, args.sidecar)
    cfg = _train_config(args)
    run_ = Run(args, [args.rules, args.sidecar, args.config])
    backend = make_backend(args.arch, args.d, args.seed)
    before = backend.parameter_hash()
    res = train_codebook(backend, system, cfg)
    assert backend.parameter_hash() == before
    run_.write_json("codebook.json", {"codebook": res.codebook.to_json(system.alphabet)}, metadata=False)
    run_.write_json(
        "train.json",
        {
            "arch": args.arch,
            "d": args.d,
            "success": res.success,
            "iterations_to_universality": res.iterations_to_universality,
            "iteration_resolution": res.verify_every,
            "log_time_metric": res.log_time_metric,
            "max_iterations": res.max_iterations,
            "backend": backend.describe(),
            "loss_history": res.loss_history,
        },
    )
    print(f"success={str(res.success).lower()} iterations={res.iterations_to_universality} "
          f"log_time_metric={res.log_time_metric:.4f}")
    return EXIT_OK


def plot_series(rows: list[dict]) -> tuple[list[dict], list[dict]]:
    """Per-(arch, d) means and per-seed points of log_time_metric."""
    groups: dict[tuple[str, int], list[float]] = {}
    seeds: list[dict] = []
    for r in rows:
        key = (r["arch"], int(r["d"]))
        ltm = float(r["log_time_metric"])
        groups.setdefault(key, []).append(ltm)
        seeds.append({"arch": r["arch"], "d": int(r["d"]), "seed": int(r["seed"]), "log_time_metric": ltm})
    means = [
        {"arch": a, "d": d, "mean_log_time_metric": mean(v), "runs": len(v),
         "successes": sum(1 for x in v if x < 0)}
        for (a, d), v in sorted(groups.items())
    ]
    return means, sorted(seeds, key=lambda r: (r["arch"], r["seed"], r["d"]))


def render_svg(means: list[dict], seeds: list[dict], width: int = 640, height: int = 400) -> str:
    """Line chart of log time-to-universality against log2(d)."""
    colors = {"rnn": "#1f77b4", "attention": "#d62728"}
    pad = 50
    ds = sorted({r["d"] for r in means}) or [1]
    ys = [r["log_time_metric"] for r in seeds] + [0.0, -1.0]
    xmin, xmax = math.log2(min(ds)), math.log2(max(ds))
    ymin, ymax = min(ys), 0.0
    xspan = (xmax - xmin) or 1.0
    yspan = (ymax - ymin) or 1.0

    def px(d):
        return pad + (math.log2(d) - xmin) / xspan * (width - 2 * pad)

    def py(y):
        return pad + (ymax - y) / yspan * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle" font-size="12">dimension d (log scale)</text>',
        f'<text x="14" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 14 {height / 2:.0f})" '
        'text-anchor="middle">log time-to-universality</text>',
    ]
    for d in ds:
        parts.append(f'<text x="{px(d):.1f}" y="{height - pad + 15}" text-anchor="middle" font-size="10">{d}</text>')
    for arch in sorted({r["arch"] for r in means}):
        color = colors.get(arch, "#555555")
        for seed in sorted({r["seed"] for r in seeds if r["arch"] == arch}):
            pts = [r for r in seeds if r["arch"] == arch and r["seed"] == seed]
            path = " ".join(f"{px(r['d']):.1f},{py(r['log_time_metric']):.1f}" for r in sorted(pts, key=lambda r: r["d"]))
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-opacity="0.25"/>')
        pts = sorted((r for r in means if r["arch"] == arch), key=lambda r: r["d"])
        path = " ".join(f"{px(r['d']):.1f},{py(r['mean_log_time_metric']):.1f}" for r in pts)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2.5"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{py(pts[-1]["mean_log_time_metric"]):.1f}" '
                     f'font-size="11" fill="{color}">{arch}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_plot(run_: Run, rows: list[dict]) -> None:
    means, seeds = plot_series(rows)
    with run_.path("plot.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "arch", "d", "seed", "log_time_metric", "version", "config_hash"])
        for r in means:
            w.writerow(["mean", r["arch"], r["d"], "", f"{r['mean_log_time_metric']:.6f}", __version__, run_.config_hash])
        for r in seeds:
            w.writerow(["seed", r["arch"], r["d"], r["seed"], f"{r['log_time_metric']:.6f}", __version__, run_.config_hash])
    svg = render_svg(means, seeds)
    svg = svg.replace("<svg ", f'<svg data-version="{__version__}" data-config-hash="{run_.config_hash}" '
                      f'data-seed="{run_.seed}" ', 1)
    run_.path("plot.svg").write_text(svg, encoding="utf-8")


def _stamp_csv(text: str, run_: Run) -> str:
    lines = text.splitlines()
    if not lines:
        return text
    out = [lines[0] + ",version,config_hash"]
    out += [f"{ln},{__version__},{run_.config_hash}" for ln in lines[1:]]
    return "\n".join(out) + "\n"


def cmd_sweep(args) -> int:
    from .trainer import sweep, sweep_csv

    system = _load_system(args.rules, args.sidecar)
    cfg = _train_config(args)
    run_ = Run(args, [args.rules, args.sidecar, args.config])
    archs = [a for a in args.archs.split(",") if a]
    rows = sweep(archs, _parse_ints(args.dims), _parse_seeds(args.seeds), system, cfg, workers=args.workers)
    text = sweep_csv(rows, include_wall=args.wall_time)
    run_.path("sweep.csv").write_text(_stamp_csv(text, run_), encoding="utf-8")
    _write_plot(run_, rows)
    ok = sum(1 for r in rows if r["success"])
    print(f"rows={len(rows)} successes={ok}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_ = Run(args, list(args.inputs))
    rows: list[dict] = []
    summaries = []
    for path in args.inputs:
        text = _read_text(path)
        if path.endswith(".csv"):
            reader = csv.DictReader(text.splitlines())
            if not {"arch", "d", "seed", "success"} <= set(reader.fieldnames or ()):
                raise ValueError(f"{path} is not a sweep CSV")
            rows.extend(reader)
        else:
            obj = json.loads(text)
            if "summary" in obj:
                summaries.append({"file": os.path.basename(path), **obj["summary"]})
    if rows:
        _write_plot(run_, rows)
    run_.write_json("report.json", {"verification": summaries, "sweep_rows": len(rows)})
    for s in summaries:
        print(f"{s['file']}: passed {s['passed']}/{s['total']}")
    if rows:
        print(f"sweep rows: {len(rows)}; plot written to {run_.path('plot.svg')}")
    return EXIT_OK if all(s["passed"] == s["total"] for s in summaries) else EXIT_FAIL


# -- parser -------------------------------------------------------------------

def _backend_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("rules", help="rule file")
    p.add_argument("--sidecar", help="alphabet sidecar JSON (default: <rules>.json if present)")
    p.add_argument("--backend", choices=["ruletable", "remote", "rnn", "attention"], default="ruletable")
    p.add_argument("--backend-config", help="TOML file for the remote backend")
    p.add_argument("--backend-seed", type=int, default=0, help="seed of a random network backend")
    p.add_argument("--codebook", help="codebook JSON (default: token-pair codebook)")
    p.add_argument("--tokens", type=int, help="token count for the default pair codebook")
    p.add_argument("--prompt", help="system prompt file (whitespace-separated tokens)")
    p.add_argument("--context-window", type=int, default=64)
    p.add_argument("--corrupt", action="append", metavar="'A B -> C'",
                   help="override one rule of the rule-table backend (fault injection)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lagsim", description="Lag systems, Turing machines and decoding checks.")
    ap.add_argument("--version", action="version", version=f"lagsim {__version__}")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="lagsim-out", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-tm", help="run a Turing machine and write its trace")
    p.add_argument("machine")
    p.add_argument("--input", default="", help="initial tape, e.g. 011")
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_run_tm)

    p = sub.add_parser("run-lag", help="run a Lag system and write its trace")
    p.add_argument("rules")
    p.add_argument("--sidecar")
    p.add_argument("--input", required=True, help="whitespace-separated symbols")
    p.add_argument("--budget", type=int, default=1000)
    p.set_defaults(func=cmd_run_lag)

    p = sub.add_parser("compile", help="compile a Turing machine to a Lag system")
    p.add_argument("machine")
    p.add_argument("--name")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--reduce", action="store_true", help="keep only rules used from --input")
    p.add_argument("--input", default="")
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--budget", type=int, default=100000)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("verify", help="check every rule against a backend")
    _backend_args(p)
    p.add_argument("--format", choices=["summary", "full"], default="summary")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("cosim", help="co-simulate a backend with the Lag engine")
    _backend_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.set_defaults(func=cmd_cosim)

    for name, fn in (("train", cmd_train), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help="learn a vector codebook" if name == "train" else "train over a grid")
        p.add_argument("rules")
        p.add_argument("--sidecar")
        p.add_argument("--config", help="TOML training config")
        p.add_argument("--max-iterations", type=int)
        if name == "train":
            p.add_argument("--arch", choices=["rnn", "attention"], default="rnn")
            p.add_argument("--d", type=int, default=64)
        else:
            p.add_argument("--archs", default="rnn,attention")
            p.add_argument("--dims", default="4,16,64")
            p.add_argument("--seeds", default="0-4")
            p.add_argument("--wall-time", action="store_true", help="include wall_seconds (not reproducible)")
        p.set_defaults(func=fn)

    p = sub.add_parser("report", help="summarize verification reports and sweep CSVs")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (LagsimError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
