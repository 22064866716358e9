"""Standard, generalized and extended autoregressive decoding.

A backend is anything with ``context_window`` and a deterministic
``next_output(context)``; it returns one token (token backends), one raw
vector (vector backends) or ``None`` when it has nothing more to say.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import IO, Callable, Sequence

import numpy as np

from .core import TOKEN_CODE, Codebook
from .errors import ContextTooLong, ProtocolViolation, ProviderRefusal, TransportError
from .lag import HaltReason, LagTrace

TOKEN = "token"
VECTOR = "vector"


class ModelBackend(ABC):
    """Greedy next-output model.  Equal contexts must give equal outputs."""

    context_window: int
    kind: str = TOKEN
    share_safe: bool = True

    @abstractmethod
    def next_output(self, context: Sequence):
        ...

    def complete(self, context: Sequence, max_outputs: int, done: Callable[[list], bool]) -> list:
        """Generate up to ``max_outputs`` outputs, stopping once ``done(outputs)``."""
        outputs: list = []
        ctx = list(context)
        while len(outputs) < max_outputs:
            out = self.next_output(ctx)
            if out is None:
                break
            outputs.append(out)
            ctx.append(out)
            if done(outputs):
                break
        return outputs

    def describe(self) -> dict:
        return {"class": type(self).__name__, "context_window": self.context_window}


class FunctionBackend(ModelBackend):
    """Wraps a pure function of the context; handy for tests and demos."""

    def __init__(self, fn: Callable[[tuple], object], context_window: int, kind: str = TOKEN):
        self.fn = fn
        self.context_window = context_window
        self.kind = kind

    def next_output(self, context):
        if self.kind == TOKEN:
            return self.fn(tuple(context))
        return self.fn(np.asarray(context, dtype=np.float64))


# -- plain decoding -----------------------------------------------------------

def _decode(model: ModelBackend, tokens: Sequence, k: int, window_start) -> list:
    if k < 0:
        raise ValueError("k must be non-negative")
    n_ctx = model.context_window
    op = list(tokens)
    n = len(op)
    for j in range(k):
        s = window_start(j, len(op), n_ctx)
        out = model.next_output(op[s: s + n_ctx])
        if out is None:
            break
        op.append(out)
    return op[n:]


def standard_decode(model: ModelBackend, tokens: Sequence, k: int) -> list:
    """The model sees the most recent N tokens; older input is forgotten."""
    return _decode(model, tokens, k, lambda j, length, n: max(0, length - n))


def generalized_decode(model: ModelBackend, tokens: Sequence, k: int) -> list:
    """The window starts at the beginning and advances one token per step.

    While everything fits in the window the start stays at 0, which makes
    this identical to :func:`standard_decode`.
    """
    return _decode(model, tokens, k, lambda j, length, n: min(j, max(0, length - n)))


def window_starts(mode: str, n: int, k: int, n_ctx: int) -> list[int]:
    """Window start per step for an input of length n and no early stop."""
    if mode == "standard":
        return [max(0, n + j - n_ctx) for j in range(k)]
    return [min(j, max(0, n + j - n_ctx)) for j in range(k)]


# -- extended decoding --------------------------------------------------------

@dataclass
class OperationalString:
    symbols: list[int]
    cursor: int = 0

    def __post_init__(self):
        self.symbols = [int(s) for s in self.symbols]
        if not 0 <= self.cursor <= len(self.symbols):
            raise ValueError("cursor out of range")

    def window(self) -> list[int]:
        return self.symbols[self.cursor:]


@dataclass
class SimulationConfig:
    codebook: Codebook
    system_prompt: tuple = ()
    max_output_codewords_per_step: int = 3
    step_budget: int = 1000
    snapshot_every: int = 0

    def __post_init__(self):
        if self.max_output_codewords_per_step < 2:
            raise ValueError("max_output_codewords_per_step must be at least 2")
        if self.step_budget < 0:
            raise ValueError("step_budget must be non-negative")
        if self.codebook.kind == TOKEN_CODE:
            self.system_prompt = tuple(self.system_prompt)
        else:
            self.system_prompt = tuple(np.asarray(v, dtype=np.float64) for v in self.system_prompt)

    def required_context(self) -> int:
        """Longest context any query of one extended step can need."""
        w = self.codebook.max_width
        return len(self.system_prompt) + 2 * w + self.max_output_codewords_per_step * w - 1


def check_context(model: ModelBackend, config: SimulationConfig) -> None:
    need = config.required_context()
    if model.context_window < need:
        raise ContextTooLong(
            f"context window {model.context_window} is smaller than the {need} positions "
            "needed by the system prompt, two input codewords and the per-step output cap"
        )


def query_context(config: SimulationConfig, s1: int, s2: int) -> list:
    cb = config.codebook
    if cb.kind == TOKEN_CODE:
        return list(config.system_prompt) + list(cb.encode(s1)) + list(cb.encode(s2))
    return list(config.system_prompt) + [cb.encode(s1), cb.encode(s2)]


class _TokenSegmenter:
    """Incremental codeword parser used as the ``done`` callback."""

    def __init__(self, codebook: Codebook, cap: int):
        self.cb = codebook
        self.cap = cap
        self.symbols: list[int] = []
        self.buf: list = []
        self.fed = 0
        self.error: str | None = None
        self.halted = False

    def feed(self, tok) -> None:
        self.buf.append(tok)
        sym = self.cb.lookup(self.buf)
        if sym is not None:
            self.buf = []
            if sym == self.cb.halt:
                self.halted = True
            else:
                self.symbols.append(sym)
        elif not self.cb.is_proper_prefix(self.buf):
            self.error = f"tokens {self.buf!r} do not start any codeword"

    @property
    def finished(self) -> bool:
        return self.halted or self.error is not None or len(self.symbols) >= self.cap

    def __call__(self, outputs: list) -> bool:
        while self.fed < len(outputs) and not self.finished:
            self.feed(outputs[self.fed])
            self.fed += 1
        return self.finished


def query_symbols(model: ModelBackend, config: SimulationConfig, s1: int, s2: int) -> list[int]:
    """Ask the model for the production of ``s1 s2``; returns non-halt symbols.

    Raises :class:`ProtocolViolation` for an empty production, a missing
    halt within the cap, unparseable output or a transport failure.
    """
    cb = config.codebook
    cap = config.max_output_codewords_per_step
    ctx = query_context(config, s1, s2)
    if cb.kind == TOKEN_CODE:
        seg = _TokenSegmenter(cb, cap)
        try:
            outputs = model.complete(ctx, cap * cb.max_width, seg)
        except (TransportError, ProviderRefusal) as exc:
            raise ProtocolViolation(ProtocolViolation.TRANSPORT, ctx, None, str(exc)) from exc
        seg = _TokenSegmenter(cb, cap)
        seg(list(outputs))
        if seg.error is not None:
            raise ProtocolViolation(ProtocolViolation.PARSE_FAILURE, ctx, outputs, seg.error)
        return _finish(seg.symbols, seg.halted, seg.buf, ctx, outputs, cap)

    symbols: list[int] = []
    raw: list = []
    halted = False
    feed = list(ctx)
    while len(symbols) < cap:
        v = model.next_output(feed)
        if v is None:
            break
        v = np.asarray(v, dtype=np.float64)
        raw.append(v)
        if v.shape != (cb.dimension,) or not np.all(np.isfinite(v)):
            raise ProtocolViolation(ProtocolViolation.PARSE_FAILURE, ctx, raw, "output is not a finite codeword-sized vector")
        sym = cb.nearest(v)
        if sym == cb.halt:
            halted = True
            break
        symbols.append(sym)
        feed.append(cb.encode(sym))
    return _finish(symbols, halted, [], ctx, raw, cap)


def _finish(symbols, halted, buf, ctx, outputs, cap):
    if halted and not symbols:
        raise ProtocolViolation(ProtocolViolation.EMPTY_PRODUCTION, ctx, outputs, "first codeword is halt")
    if not halted:
        if buf:
            raise ProtocolViolation(ProtocolViolation.PARSE_FAILURE, ctx, outputs, f"dangling partial codeword {buf!r}")
        if not outputs:
            raise ProtocolViolation(ProtocolViolation.PARSE_FAILURE, ctx, outputs, "empty response")
        raise ProtocolViolation(
            ProtocolViolation.NO_HALT, ctx, outputs, f"no halt within {cap} codewords"
        )
    return symbols


def extended_decode_step(model: ModelBackend, config: SimulationConfig, op: OperationalString):
    """One step: read two symbols at the cursor, append the production, advance by one.

    Returns the appended symbols, or ``HaltReason.STRING_TOO_SHORT``.
    """
    if op.cursor + 2 > len(op.symbols):
        return HaltReason.STRING_TOO_SHORT
    out = query_symbols(model, config, op.symbols[op.cursor], op.symbols[op.cursor + 1])
    op.symbols.extend(out)
    op.cursor += 1
    return tuple(out)


@dataclass
class SimulationResult:
    """Decoded operational-string trace of an extended-decoding run.

    ``trace`` has the same layout as a Lag engine trace, so ``trace[k]`` is
    the unread part of the operational string after k steps.
    """

    trace: LagTrace
    violation: ProtocolViolation | None = None
    appended: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.trace.steps


def simulate_lag(model: ModelBackend, config: SimulationConfig, input: Sequence[int], alphabet) -> SimulationResult:
    """Iterate :func:`extended_decode_step` until halt, violation or budget."""
    check_context(model, config)
    for s in input:
        config.codebook.encode(s)
    op = OperationalString(list(input))
    lengths = [len(op.symbols)]
    appended: list[tuple[int, ...]] = []
    halt = HaltReason.STEP_BUDGET
    violation = None
    for _ in range(config.step_budget):
        try:
            res = extended_decode_step(model, config, op)
        except ProtocolViolation as exc:
            violation = exc
            halt = HaltReason.NO_RULE_MATCH
            break
        if isinstance(res, HaltReason):
            halt = res
            break
        appended.append(res)
        lengths.append(len(op.symbols) - op.cursor)
    trace = LagTrace(
        alphabet,
        np.asarray(op.symbols, dtype=np.int32),
        np.asarray(lengths, dtype=np.int32),
        halt,
        1,
    )
    return SimulationResult(trace, violation, appended)


def write_simulation_jsonl(result: SimulationResult, fp: IO[str], snapshot_every: int = 0) -> None:
    alpha = result.trace.alphabet
    tr = result.trace
    for k in range(len(tr)):
        rec = {
            "step": k,
            "appended": alpha.render(result.appended[k - 1]) if k else [],
            "cursor": k,
            "string_len": int(tr.lengths[k]),
        }
        if snapshot_every and k % snapshot_every == 0:
            rec["string"] = alpha.render(tr[k])
        fp.write(json.dumps(rec) + "\n")
    if result.violation is not None:
        v = result.violation
        fp.write(json.dumps({"step": tr.steps, "violation": v.kind, "detail": v.detail}) + "\n")
