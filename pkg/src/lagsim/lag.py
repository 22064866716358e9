"""Lag systems: prefix match, append, delete.

A run is stored as the append-only *stream* of every symbol that ever sat in
the queue plus the queue length after each step.  For deletion ``d`` the
string at step k is ``stream[d*k : d*k + lengths[k]]``, so a trace of a
million steps costs a few megabytes instead of a million string copies.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .core import Alphabet, Violation
from .errors import ForeignSymbol, ParseError

DEFAULT_HALT = "!h"
MAX_RHS = 2

if os.environ.get("LAGSIM_PURE"):
    from . import _lagkernel_py as _kernel
else:
    try:
        from . import _lagkernel as _kernel
    except ImportError:  # extension not built
        from . import _lagkernel_py as _kernel

KERNEL = "compiled" if _kernel.__name__.endswith("_lagkernel") else "python"

_CHUNK = 1 << 20


class HaltReason(enum.Enum):
    NO_RULE_MATCH = "NoRuleMatch"
    STRING_TOO_SHORT = "StringTooShort"
    STEP_BUDGET = "StepBudget"


_CODES = {1: HaltReason.NO_RULE_MATCH, 2: HaltReason.STRING_TOO_SHORT}


@dataclass(frozen=True)
class ProductionRule:
    lhs: tuple[int, ...]
    rhs: tuple[int, ...]


@dataclass(frozen=True)
class LagConfiguration:
    string: tuple[int, ...]
    step_index: int = 0


class LagSystem:
    """Deterministic rewriting machine over ``alphabet``.

    ``rules`` keeps ingestion order, duplicates included, so that
    :func:`validate` can report them; lookups use the first rule per lhs.
    """

    def __init__(
        self,
        alphabet: Alphabet,
        rules: Iterable[ProductionRule],
        lag: int = 2,
        deletion: int = 1,
    ):
        if lag < 1 or deletion < 1:
            raise ValueError("lag and deletion must be positive")
        self.alphabet = alphabet
        self.rules = tuple(rules)
        self.lag = lag
        self.deletion = deletion
        table: dict[tuple[int, ...], tuple[int, ...]] = {}
        for r in self.rules:
            table.setdefault(tuple(r.lhs), tuple(r.rhs))
        self.table = table
        self._arrays = None

    def __len__(self) -> int:
        return len(self.table)

    def __repr__(self) -> str:
        return f"LagSystem({len(self.table)} rules, {len(self.alphabet)} symbols, lag={self.lag})"

    def sorted_rules(self) -> list[ProductionRule]:
        return [ProductionRule(lhs, self.table[lhs]) for lhs in sorted(self.table)]

    def stats(self) -> dict:
        return {
            "rule_count": len(self.table),
            "symbol_count": len(self.alphabet) - 1,
            "two_output_rule_count": sum(1 for rhs in self.table.values() if len(rhs) == 2),
        }

    def kernel_arrays(self):
        if self._arrays is None:
            n = len(self.alphabet)
            items = sorted(self.table.items())
            keys = np.array([lhs[0] * n + lhs[1] for lhs, _ in items], dtype=np.int64)
            rhs = np.zeros((len(items), MAX_RHS), dtype=np.int32)
            rhs_len = np.zeros(len(items), dtype=np.int32)
            for i, (_, out) in enumerate(items):
                rhs[i, : len(out)] = out
                rhs_len[i] = len(out)
            order = np.argsort(keys, kind="stable")
            self._arrays = (keys[order], np.ascontiguousarray(rhs[order]), rhs_len[order])
        return self._arrays

    def with_rules(self, rules: Iterable[ProductionRule]) -> "LagSystem":
        return LagSystem(self.alphabet, rules, self.lag, self.deletion)

    def digest(self) -> str:
        from .core import sha256_json

        return sha256_json(format_rules(self))


# Reference figures for the published universal system.
REFERENCE_STATS = {"rule_count": 1857, "symbol_count": 249, "two_output_rule_count": 14}


def check_reference_stats(system: LagSystem) -> dict:
    got = system.stats()
    return {k: {"expected": v, "actual": got[k], "match": got[k] == v} for k, v in REFERENCE_STATS.items()}


def validate(system: LagSystem) -> list[Violation]:
    out: list[Violation] = []
    alpha = system.alphabet
    n = len(alpha)
    if system.deletion > system.lag:
        out.append(Violation("deletion", (), f"deletion {system.deletion} exceeds lag {system.lag}"))
    seen: dict[tuple, tuple] = {}
    for r in system.rules:
        syms = tuple(r.lhs) + tuple(r.rhs)
        foreign = tuple(s for s in syms if not 0 <= s < n)
        if foreign:
            out.append(Violation("foreign_symbol", foreign, f"rule {r} uses ids outside the alphabet"))
            continue
        if alpha.halt in syms:
            out.append(Violation("halt_in_rule", (alpha.halt,), f"rule {_fmt(alpha, r)} mentions the halt symbol"))
        if len(r.lhs) != system.lag:
            out.append(Violation("lhs_length", tuple(r.lhs), f"rule {_fmt(alpha, r)} has lhs length {len(r.lhs)}"))
        if not 1 <= len(r.rhs) <= MAX_RHS:
            out.append(Violation("rhs_length", tuple(r.lhs), f"rule {_fmt(alpha, r)} has {len(r.rhs)} outputs"))
        key = tuple(r.lhs)
        if key in seen:
            how = "conflicting" if seen[key] != tuple(r.rhs) else "repeated"
            out.append(
                Violation("duplicate_lhs", key, f"{how} rules for lhs {' '.join(alpha.render(key))}")
            )
        else:
            seen[key] = tuple(r.rhs)
    return out


def _fmt(alpha: Alphabet, r: ProductionRule) -> str:
    return f"{' '.join(alpha.render(r.lhs))} -> {' '.join(alpha.render(r.rhs))}"


def step(system: LagSystem, config: LagConfiguration) -> LagConfiguration | HaltReason:
    s = config.string
    n = len(system.alphabet)
    for x in s:
        if not 0 <= x < n:
            raise ForeignSymbol(f"symbol id {x} is not in the alphabet")
    if len(s) < system.lag:
        return HaltReason.STRING_TOO_SHORT
    out = system.table.get(tuple(s[: system.lag]))
    if out is None:
        return HaltReason.NO_RULE_MATCH
    return LagConfiguration(tuple(s[system.deletion:]) + out, config.step_index + 1)


class LagTrace:
    """Sequence of configurations of one run plus the reason it stopped."""

    def __init__(self, alphabet: Alphabet, stream: np.ndarray, lengths: np.ndarray, halt: HaltReason, deletion: int = 1):
        self.alphabet = alphabet
        self.stream = stream
        self.lengths = lengths
        self.halt = halt
        self.deletion = deletion

    def __len__(self) -> int:
        return len(self.lengths)

    @property
    def steps(self) -> int:
        return len(self.lengths) - 1

    def start(self, k: int) -> int:
        return self.deletion * k

    def __getitem__(self, k: int) -> tuple[int, ...]:
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        a = self.deletion * k
        return tuple(self.stream[a: a + int(self.lengths[k])].tolist())

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        for k in range(len(self)):
            yield self[k]

    def configurations(self) -> Iterator[LagConfiguration]:
        for k in range(len(self)):
            yield LagConfiguration(self[k], k)

    def appended(self, k: int) -> tuple[int, ...]:
        """Symbols appended by step k (producing configuration k+1)."""
        end_prev = self.deletion * k + int(self.lengths[k])
        end = self.deletion * (k + 1) + int(self.lengths[k + 1])
        return tuple(self.stream[end_prev:end].tolist())

    def final(self) -> tuple[int, ...]:
        return self[len(self) - 1]


def run(system: LagSystem, input: Sequence[int], max_steps: int) -> LagTrace:
    if max_steps < 0:
        raise ValueError("max_steps must be non-negative")
    s0 = system.alphabet.check_string(input)
    fast = (
        system.lag == 2
        and system.deletion == 1
        and all(1 <= len(r) <= MAX_RHS for r in system.table.values())
    )
    if fast:
        return _run_kernel(system, s0, max_steps)
    return _run_generic(system, s0, max_steps)


def _run_generic(system: LagSystem, s0: tuple[int, ...], max_steps: int) -> LagTrace:
    stream = list(s0)
    lengths = [len(s0)]
    pos = 0
    halt = HaltReason.STEP_BUDGET
    lag, dele, table = system.lag, system.deletion, system.table
    for _ in range(max_steps):
        length = lengths[-1]
        if length < lag:
            halt = HaltReason.STRING_TOO_SHORT
            break
        out = table.get(tuple(stream[pos: pos + lag]))
        if out is None:
            halt = HaltReason.NO_RULE_MATCH
            break
        stream.extend(out)
        pos += dele
        lengths.append(length - dele + len(out))
    else:
        halt = HaltReason.STEP_BUDGET
    return LagTrace(
        system.alphabet, np.asarray(stream, dtype=np.int32), np.asarray(lengths, dtype=np.int32), halt, dele
    )


def _run_kernel(system: LagSystem, s0: tuple[int, ...], max_steps: int) -> LagTrace:
    keys, rhs, rhs_len = system.kernel_arrays()
    n = len(system.alphabet)
    cap = len(s0) + 2 * min(max_steps, _CHUNK) + 2
    stream = np.zeros(cap, dtype=np.int32)
    stream[: len(s0)] = s0
    lengths = np.zeros(max_steps + 1, dtype=np.int32)
    lengths[0] = len(s0)
    pos, length, done = 0, len(s0), 0
    halt = HaltReason.STEP_BUDGET
    while done < max_steps:
        chunk = min(max_steps - done, _CHUNK)
        need = pos + length + 2 * chunk
        if need > len(stream):
            grown = np.zeros(max(need, 2 * len(stream)), dtype=np.int32)
            grown[: pos + length] = stream[: pos + length]
            stream = grown
        got, length, code = _kernel.run_stream(
            keys, rhs, rhs_len, n, stream, pos, length, chunk, lengths[done + 1:]
        )
        done += got
        pos += got
        if code:
            halt = _CODES[code]
            break
    return LagTrace(system.alphabet, stream[: pos + length], lengths[: done + 1], halt, 1)


# -- file formats -------------------------------------------------------------

def parse_rules(
    text: str,
    alphabet: Alphabet | None = None,
    halt: str = DEFAULT_HALT,
    end_marker: str | None = None,
    lag: int = 2,
    deletion: int = 1,
) -> LagSystem:
    """Parse ``LHS1 LHS2 -> RHS1 [RHS2]`` lines.

    Lines starting with ``#`` that contain no ``->`` token are comments; the
    extra condition lets ``#`` itself serve as a symbol label.  Without an
    explicit alphabet, symbols are numbered in order of first appearance and
    the halt symbol is appended last.
    """
    parsed: list[tuple[list[str], list[str], int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        toks = line.split()
        if line.startswith("#") and "->" not in toks:
            continue
        if toks.count("->") != 1:
            raise ParseError("expected exactly one '->'", lineno)
        i = toks.index("->")
        lhs, rhs = toks[:i], toks[i + 1:]
        if len(lhs) != lag:
            raise ParseError(f"left-hand side must have {lag} symbols, got {len(lhs)}", lineno)
        if not rhs:
            raise ParseError("empty right-hand side", lineno)
        parsed.append((lhs, rhs, lineno))

    if alphabet is None:
        labels: dict[str, None] = {}
        for lhs, rhs, _ in parsed:
            for lab in lhs + rhs:
                labels.setdefault(lab, None)
        if end_marker is not None:
            labels.setdefault(end_marker, None)
        if halt in labels:
            raise ParseError(f"halt label {halt!r} is used as an ordinary symbol")
        alphabet = Alphabet(list(labels) + [halt], halt, end_marker)

    rules = []
    for lhs, rhs, lineno in parsed:
        try:
            rules.append(ProductionRule(alphabet.ids(lhs), alphabet.ids(rhs)))
        except ForeignSymbol as exc:
            raise ParseError(str(exc), lineno) from None
    return LagSystem(alphabet, rules, lag, deletion)


def format_rules(system: LagSystem, header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for r in system.sorted_rules():
        lines.append(_fmt(system.alphabet, r))
    return "\n".join(lines) + "\n"


def load_system(rule_path, sidecar_path=None) -> LagSystem:
    """Read a rule file, taking the alphabet from a JSON sidecar when given."""
    with open(rule_path, encoding="utf-8") as fh:
        text = fh.read()
    alphabet = None
    if sidecar_path is None:
        guess = os.fspath(rule_path) + ".json"
        if os.path.exists(guess):
            sidecar_path = guess
    if sidecar_path is not None:
        with open(sidecar_path, encoding="utf-8") as fh:
            alphabet = Alphabet.from_json(json.load(fh)["alphabet"])
    return parse_rules(text, alphabet=alphabet)


def write_trace_jsonl(trace: LagTrace, fp: IO[str]) -> None:
    alpha = trace.alphabet
    for k in range(len(trace)):
        fp.write(json.dumps({"step": k, "string": alpha.render(trace[k])}) + "\n")
