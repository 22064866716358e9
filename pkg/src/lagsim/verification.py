"""Rule-by-rule verification and lockstep co-simulation against the Lag engine."""

from __future__ import annotations

import datetime as _dt
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .core import TOKEN_CODE, Codebook, check_codebook, sha256_json
from .errors import CodebookInvalid, ProtocolViolation
from .harness import ModelBackend, SimulationConfig, check_context, query_context, query_symbols, simulate_lag
from .lag import HaltReason, LagSystem, ProductionRule, run
from .tm import TuringMachine, initial_config, tm_run

WRONG_SYMBOL = "WrongSymbol"


@dataclass
class RuleVerdict:
    lhs: list[str]
    context: list
    expected: list[str]
    observed: list[str] | None
    passed: bool
    failure_kind: str | None = None
    detail: str = ""


@dataclass
class VerificationReport:
    system: str
    backend: dict
    codebook: str
    system_prompt: str
    verdicts: list[RuleVerdict]
    version: str = __version__
    metadata: dict = field(default_factory=dict)

    @property
    def summary(self) -> dict:
        passed = sum(v.passed for v in self.verdicts)
        return {"total": len(self.verdicts), "passed": passed, "failed": len(self.verdicts) - passed}

    @property
    def ok(self) -> bool:
        s = self.summary
        return s["passed"] == s["total"]

    def failures(self) -> list[RuleVerdict]:
        return [v for v in self.verdicts if not v.passed]

    def to_json(self, full: bool = True) -> dict:
        out = {
            "version": self.version,
            "system": self.system,
            "backend": self.backend,
            "codebook": self.codebook,
            "system_prompt": self.system_prompt,
            "summary": self.summary,
            "metadata": self.metadata,
        }
        chosen = self.verdicts if full else self.failures()
        out["verdicts" if full else "failures"] = [asdict(v) for v in chosen]
        return out

    def deterministic_json(self, full: bool = True) -> str:
        """Serialization without the metadata field, for byte comparisons."""
        obj = self.to_json(full)
        obj.pop("metadata")
        return json.dumps(obj, sort_keys=True, indent=2)


def _jsonable_context(ctx: list) -> list:
    return [v.tolist() if isinstance(v, np.ndarray) else v for v in ctx]


def _prompt_json(prompt) -> list:
    return [np.asarray(v).tolist() if isinstance(v, np.ndarray) else v for v in prompt]


def _verdict(model, config, alphabet, rule: ProductionRule) -> RuleVerdict:
    s1, s2 = rule.lhs
    lab = alphabet.render
    expected = lab(rule.rhs) + [alphabet.label(alphabet.halt)]
    ctx = _jsonable_context(query_context(config, s1, s2))
    try:
        got = query_symbols(model, config, s1, s2)
    except ProtocolViolation as exc:
        observed = None
        if exc.outputs is not None and config.codebook.kind == TOKEN_CODE:
            observed = [str(t) for t in exc.outputs]
        return RuleVerdict(lab(rule.lhs), ctx, expected, observed, False, exc.kind, exc.detail)
    observed = lab(got) + [alphabet.label(alphabet.halt)]
    if tuple(got) == tuple(rule.rhs):
        return RuleVerdict(lab(rule.lhs), ctx, expected, observed, True)
    return RuleVerdict(lab(rule.lhs), ctx, expected, observed, False, WRONG_SYMBOL)


def verify_rules(
    model: ModelBackend,
    codebook: Codebook,
    system_prompt: Sequence,
    system: LagSystem,
    workers: int = 1,
    max_output_codewords_per_step: int = 3,
) -> VerificationReport:
    """Query every rule once, in lexicographic lhs order, with a fresh context."""
    violations = check_codebook(codebook, system.alphabet)
    if violations:
        raise CodebookInvalid(violations)
    config = SimulationConfig(codebook, tuple(system_prompt), max_output_codewords_per_step)
    check_context(model, config)
    rules = system.sorted_rules()
    alpha = system.alphabet
    if workers > 1 and getattr(model, "share_safe", False):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(lambda r: _verdict(model, config, alpha, r), rules))
    else:
        verdicts = [_verdict(model, config, alpha, r) for r in rules]
    return VerificationReport(
        system=system.digest(),
        backend=model.describe(),
        codebook=codebook.digest(alpha),
        system_prompt=sha256_json(_prompt_json(config.system_prompt)),
        verdicts=verdicts,
        metadata={"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()},
    )


@dataclass
class CosimReport:
    steps: int
    agreed: bool
    divergence_step: int | None
    lag_halt: str
    model_halt: str
    halt_agreed: bool
    violation: str | None = None
    rule: list[str] | None = None

    def to_json(self) -> dict:
        return asdict(self)


def cosimulate(
    model: ModelBackend,
    codebook: Codebook,
    system_prompt: Sequence,
    system: LagSystem,
    input: Sequence[int],
    steps: int,
    max_output_codewords_per_step: int = 3,
) -> CosimReport:
    """Run the model under extended decoding next to the Lag engine.

    The runs agree when every operational string the engine produces is
    matched by the model.  Once the engine finds no rule, the pair it is
    looking at has no specified production, so the model's reply to it is
    not compared; ``halt_agreed`` separately records whether the model also
    stopped there (a protocol violation at the same step).  For any other
    stop reason both runs must stop at the same step.  ``divergence_step``
    is the first configuration index that differs.
    """
    config = SimulationConfig(codebook, tuple(system_prompt), max_output_codewords_per_step, steps)
    ref = run(system, input, steps)
    res = simulate_lag(model, config, input, system.alphabet)
    sim = res.trace
    alpha = system.alphabet
    div = None
    for k in range(min(len(ref), len(sim))):
        if ref.lengths[k] != sim.lengths[k] or ref[k] != sim[k]:
            div = k
            break
    if div is None and len(sim) < len(ref):
        div = len(sim)
    open_ended = ref.halt is HaltReason.NO_RULE_MATCH
    if div is None and not open_ended and (len(sim) != len(ref) or sim.halt != ref.halt):
        div = min(len(ref), len(sim))
    halt_agreed = len(sim) == len(ref) and sim.halt == ref.halt
    rule = None
    if div is not None and div >= 1:
        rule = alpha.render(ref[div - 1][:2]) if div - 1 < len(ref) else None
    return CosimReport(
        steps=min(ref.steps, sim.steps),
        agreed=div is None,
        divergence_step=div,
        lag_halt=ref.halt.value,
        model_halt=sim.halt.value,
        halt_agreed=halt_agreed,
        violation=None if res.violation is None else res.violation.kind,
        rule=rule,
    )


@dataclass
class EndToEndReport:
    passed: bool
    stage: str | None
    verification: dict
    cosim: dict | None
    tm_steps_checked: int
    halting_agreed: bool | None
    detail: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def end_to_end_tm_check(
    machine: TuringMachine,
    backend_factory: Callable,
    codebook_factory: Callable,
    system_prompt: Sequence,
    tm_input,
    tm_steps: int,
    head: int = 0,
    reduce: bool = False,
    workers: int = 1,
) -> EndToEndReport:
    """TM, compiled Lag system and model must agree on one run.

    ``codebook_factory(compiled)`` and ``backend_factory(compiled, codebook)``
    build the model side once the machine is compiled.
    """
    from .compiler import compile_machine

    compiled = compile_machine(machine)
    c0 = initial_config(machine, tm_input, head)
    tm_trace = tm_run(machine, c0, tm_steps)
    # the Lag string keeps blank cells the canonical form trims, so bound
    # each macro step by the encoded start length plus one cell per TM step
    len0 = len(compiled.encode_config(c0))
    lag_budget = sum(2 * (len0 + k) for k in range(len(tm_trace.configs))) + 1
    if reduce:
        compiled = compiled.reduce([compiled.encode_config(c0)], lag_budget)
    system = compiled.system
    codebook = codebook_factory(compiled)
    model = backend_factory(compiled, codebook)

    report = verify_rules(model, codebook, system_prompt, system, workers=workers)
    vjson = report.to_json(full=False)
    vjson.pop("metadata")
    if not report.ok:
        return EndToEndReport(False, "verify_rules", vjson, None, 0, None, f"{report.summary['failed']} rules failed")

    s0 = compiled.encode_config(c0)
    cos = cosimulate(model, codebook, system_prompt, system, s0, lag_budget)
    if not cos.agreed:
        return EndToEndReport(False, "cosimulate", vjson, cos.to_json(), 0, None, f"diverged at step {cos.divergence_step}")

    config = SimulationConfig(codebook, tuple(system_prompt), 3, lag_budget)
    sim = simulate_lag(model, config, s0, system.alphabet).trace
    # past the engine's stop the model is unconstrained, so decode only the
    # configurations cosimulate compared
    horizon = len(run(system, s0, lag_budget))
    idx = [k for k in compiled.checkpoint_indices(sim) if k < horizon]
    decoded = [compiled.decode_config(sim[k]) for k in idx]
    expected = tm_trace.configs
    n = min(len(decoded), len(expected))
    if decoded[:n] != expected[:n] or len(decoded) < len(expected):
        return EndToEndReport(False, "decode", vjson, cos.to_json(), n, None, "decoded checkpoints differ from the TM trace")
    if tm_trace.halted:
        halting_agreed = cos.lag_halt == HaltReason.NO_RULE_MATCH.value and len(decoded) == len(expected)
    else:
        halting_agreed = True
    return EndToEndReport(
        halting_agreed, None if halting_agreed else "halting", vjson, cos.to_json(), len(expected) - 1, halting_agreed
    )
