"""Acceptance criteria, one test each.

Every test records a one-line verdict; the lines are printed together at
the end of the pytest run.  Wall-clock limits are asserted where a
criterion states one.
"""

import os
import time

import numpy as np
import pytest

from lagsim.backends import RemoteChatBackend, RemoteConfig, RuleTableBackend
from lagsim.compiler import compile_machine
from lagsim.core import Alphabet, build_pair_codebook
from lagsim.harness import FunctionBackend, generalized_decode, standard_decode
from lagsim.lag import HaltReason, LagSystem, ProductionRule, check_reference_stats, load_system, run
from lagsim.tm import initial_config, load_tm, make_config, tm_run
from lagsim.trainer import TrainConfig, sweep
from lagsim.verification import cosimulate, verify_rules

from conftest import ACCEPTANCE, MACHINES, MockChat, fixture_path, rule_table_replies
from oracles import naive_lag
from test_compiler import check_macro_step, sample_reachable
from trainer_cases import gradient_case


class Clock:
    def __init__(self, limit):
        self.limit = limit
        self.t0 = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0

    def within(self):
        return self.limit is None or self.elapsed < self.limit


def record(n, ok, detail):
    ACCEPTANCE[n] = ("PASS" if ok else "FAIL", detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def skip(n, detail):
    ACCEPTANCE[n] = ("SKIP", detail)
    pytest.skip(detail)


def pair_codebook(system):
    n = int(np.ceil(np.sqrt(len(system.alphabet))))
    return build_pair_codebook(system.alphabet, [f"k{i}" for i in range(n)])


def test_criterion_1_lag_engine_properties():
    clock = Clock(10)
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        alpha = Alphabet([f"x{i}" for i in range(n)] + ["!h"], "!h")
        rules = [
            ProductionRule((a, b), tuple(int(x) for x in rng.integers(0, n, int(rng.integers(1, 3)))))
            for a in range(n) for b in range(n) if rng.random() < 0.9
        ]
        system = LagSystem(alpha, rules)
        word = tuple(int(x) for x in rng.integers(0, n, int(rng.integers(0, 12))))
        budget = int(rng.integers(0, 200))
        tr = run(system, word, budget)
        again = run(system, word, budget)
        ok = list(tr) == list(again) and tr.halt == again.halt
        ref, reason = naive_lag(system.table, word, budget)
        ok &= list(tr) == ref and tr.halt.value == reason
        for k in range(tr.steps):
            u, v = tr[k], tr[k + 1]
            ok &= len(v) - len(u) in (0, 1) and v[: len(u) - 1] == u[1:]
        bad += not ok
    record(1, bad == 0 and clock.within(), f"1000 random runs, {bad} violations, {clock.elapsed:.1f}s (limit 10s)")


def test_criterion_2_compiler_soundness(machines, compiled):
    clock = Clock(60)
    rng = np.random.default_rng(7)
    checked = 0
    for name, (tape, head) in MACHINES.items():
        m, comp = machines[name], compiled[name]
        for c in sample_reachable(m, rng, 100):
            check_macro_step(comp, c)
            checked += 1
        c0 = initial_config(m, tape, head)
        ref = tm_run(m, c0, 10_000)
        tr = run(comp.system, comp.encode_config(c0), 1_000_000)
        decoded = [comp.decode_config(tr[k]) for k in comp.checkpoint_indices(tr)]
        assert decoded == ref.configs and ref.halted and tr.halt is HaltReason.NO_RULE_MATCH
    record(2, clock.within(), f"{checked} macro steps and 4 full runs agree, {clock.elapsed:.1f}s (limit 60s)")


def random_inputs(comp, rng, count):
    m = comp.machine
    live = [q for q in m.states if q not in m.halting]
    out = []
    for _ in range(count):
        width = int(rng.integers(1, 8))
        cells = [m.alphabet[i] for i in rng.integers(0, len(m.alphabet), width)]
        state = live[int(rng.integers(0, len(live)))]
        out.append(comp.encode_config(make_config(cells, int(rng.integers(0, width)), state, m.blank)))
    return out


def test_criterion_3_rule_table_executes_the_system(machines, compiled):
    clock = Clock(60)
    rng = np.random.default_rng(3)
    diverged = 0
    for name in MACHINES:
        comp = compiled[name]
        system = comp.system
        cb = pair_codebook(system)
        model = RuleTableBackend(system, cb)
        assert verify_rules(model, cb, (), system).ok
        for s0 in random_inputs(comp, rng, 50):
            diverged += not cosimulate(model, cb, (), system, s0, 1000).agreed
    # fault injection on the busy beaver's first long run
    comp = compiled["busy_beaver3"]
    system = comp.system
    cb = pair_codebook(system)
    s0 = comp.encode_config(initial_config(machines["busy_beaver3"], ""))
    tr = run(system, s0, 10_000)
    victim = tuple(tr[25][:2])
    first = next(k for k in range(tr.steps) if tr[k][:2] == victim)
    wrong = ((system.table[victim][0] + 1) % (len(system.alphabet) - 1),)
    bad = RuleTableBackend(system, cb, overrides={victim: wrong})
    failures = verify_rules(bad, cb, (), system).summary["failed"]
    cos = cosimulate(bad, cb, (), system, s0, 10_000)
    fault_ok = failures == 1 and cos.divergence_step == first + 1
    ok = diverged == 0 and fault_ok and clock.within()
    record(3, ok, f"200 co-simulations, {diverged} divergences; one corrupted rule gives {failures} failure and "
                  f"divergence at step {cos.divergence_step} (first use {first}); {clock.elapsed:.1f}s (limit 60s)")


def test_criterion_4_decoding_modes_are_isomorphic():
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(200):
        n_ctx = int(rng.integers(1, 20))
        n = int(rng.integers(0, n_ctx + 1))
        k = int(rng.integers(0, n_ctx - n + 1))
        weights = rng.integers(1, 97, n_ctx)
        model = FunctionBackend(lambda ctx, w=weights: int(sum(int(a) * int(b) for a, b in zip(ctx, w)) % 11), n_ctx)
        tokens = [int(x) for x in rng.integers(0, 11, n)]
        mismatches += standard_decode(model, tokens, k) != generalized_decode(model, tokens, k)
    record(4, mismatches == 0, f"200 random cases with n+k <= N, {mismatches} mismatches (exact)")


def test_criterion_5_remote_pipeline(compiled, tmp_path):
    clock = Clock(30)
    system = compiled["busy_beaver3"].system
    cb = pair_codebook(system)
    prompt = ("apply", "the", "rule")
    with MockChat(rule_table_replies(system, cb)) as mock:
        cfg = RemoteConfig(endpoint=mock.url, model="mock", cache_dir=str(tmp_path / "cache"), backoff=0.01)
        first = RemoteChatBackend(cfg, prompt)
        rep1 = verify_rules(first, cb, prompt, system)
        second = RemoteChatBackend(cfg, prompt)
        rep2 = verify_rules(second, cb, prompt, system)
    identical = rep1.deterministic_json().encode() == rep2.deterministic_json().encode()
    ok = rep1.ok and second.network_calls == 0 and identical and clock.within()
    record(5, ok, f"{rep1.summary['passed']}/{rep1.summary['total']} rules, rerun made {second.network_calls} "
                  f"network calls, reports identical: {identical}; {clock.elapsed:.1f}s (limit 30s)")


def test_criterion_6_gradients():
    clock = Clock(60)
    errors = [gradient_case(seed)[0] for seed in range(10)]
    worst = max(errors)
    record(6, worst <= 1e-4 and clock.within(), f"10 configs, max relative error {worst:.2e} (limit 1e-4), "
                                                 f"{clock.elapsed:.1f}s (limit 60s)")


@pytest.mark.slow
def test_criterion_7_size_threshold(reduced_bb):
    system = reduced_bb.system
    assert len(system) <= 100
    cfg = TrainConfig()  # full-batch Adam, step 1e-4, 20,000 iterations
    clock = Clock(None)
    counts = {}
    for arch in ("rnn", "attention"):
        rows = sweep([arch], [64, 2], range(5), system, cfg)
        for d in (64, 2):
            got = [r for r in rows if r["d"] == d]
            assert all(r["error"] == "" for r in got), got
            counts[(arch, d)] = sum(r["success"] for r in got)
            if d == 2:
                assert all(r["log_time_metric"] == 0.0 for r in got)
    ok = counts[("rnn", 64)] >= 4 and counts[("rnn", 2)] == 0
    ok &= counts[("attention", 64)] >= 3 and counts[("attention", 2)] == 0
    detail = ", ".join(f"{a} d={d}: {c}/5" for (a, d), c in counts.items())
    record(7, ok, f"{len(system)}-rule system; {detail}; {clock.elapsed:.0f}s")


def test_criterion_8_full_scale_stretch():
    skip(8, "non-gating; run scripts/full_scale_stretch.py (hours of CPU)")


def test_criterion_9_reference_statistics(compiled):
    # the loader check itself, on a synthetic table with the reference counts
    n = 249
    alpha = Alphabet([f"s{i}" for i in range(n)] + ["!h"], "!h")
    pairs = [(a, b) for a in range(n) for b in range(n)][:1857]
    rules = [ProductionRule(p, (p[0], p[1]) if i < 14 else (p[1],)) for i, p in enumerate(pairs)]
    synthetic = check_reference_stats(LagSystem(alpha, rules))
    assert all(v["match"] for v in synthetic.values())
    own = {name: c.stats for name, c in compiled.items()}
    detail = "generic compiler: " + "; ".join(
        f"{k} {s['rule_count']} rules/{s['symbol_count']} symbols/{s['two_output_rule_count']} two-output"
        for k, s in own.items()
    )
    path = os.environ.get("LAGSIM_REFERENCE_RULES")
    if path:
        ref = check_reference_stats(load_system(path))
        ok = all(v["match"] for v in ref.values())
        record(9, ok, f"supplied table {path}: {ref}; {detail}")
    else:
        record(9, True, f"informational, no reference table supplied (LAGSIM_REFERENCE_RULES); {detail}")


def test_criterion_10_hosted_model():
    path = os.environ.get("LAGSIM_REMOTE_CONFIG")
    if not path:
        skip(10, "non-gating; set LAGSIM_REMOTE_CONFIG or run scripts/hosted_verify.py")
    machine_sys = compile_machine(load_tm(fixture_path("increment"))).system
    cb = pair_codebook(machine_sys)
    rep = verify_rules(RemoteChatBackend(RemoteConfig.from_toml(path)), cb, (), machine_sys)
    complete = rep.summary["total"] == len(machine_sys.table)
    record(10, complete, f"pipeline completed, {rep.summary['passed']}/{rep.summary['total']} rules")
