"""Single-tape Turing machines with an unbounded tape.

Configurations keep the tape as two sequences read outward from the head,
trimmed of blanks at their far ends, so equal configurations are equal
tuples.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

from .errors import ParseError, UndeclaredSymbol

NAME_RE = re.compile(r"^[A-Za-z0-9_.+\-]+$")
MOVES = ("L", "R")


class Halted(enum.Enum):
    HALTED = "Halted"


HALTED = Halted.HALTED


@dataclass(frozen=True)
class TuringMachine:
    states: tuple[str, ...]
    alphabet: tuple[str, ...]
    blank: str
    start: str
    halting: frozenset[str]
    transitions: Mapping[tuple[str, str], tuple[str, str, str]] = field(hash=False)

    def transition(self, state: str, symbol: str):
        if state in self.halting:
            return None
        return self.transitions.get((state, symbol))

    def missing_transitions(self) -> list[tuple[str, str]]:
        return [
            (q, a)
            for q in self.states
            if q not in self.halting
            for a in self.alphabet
            if (q, a) not in self.transitions
        ]


@dataclass(frozen=True)
class TMConfiguration:
    left: tuple[str, ...]
    head: str
    right: tuple[str, ...]
    state: str

    def tape(self) -> tuple[list[str], int]:
        """Cells left to right and the head index."""
        cells = list(reversed(self.left)) + [self.head] + list(self.right)
        return cells, len(self.left)

    def to_json(self) -> dict:
        return {"state": self.state, "left": list(self.left), "head": self.head, "right": list(self.right)}


def _trim(seq: Sequence[str], blank: str) -> tuple[str, ...]:
    end = len(seq)
    while end and seq[end - 1] == blank:
        end -= 1
    return tuple(seq[:end])


def make_config(cells: Sequence[str], head: int, state: str, blank: str) -> TMConfiguration:
    """Canonical configuration from a left-to-right tape and head index.

    ``head`` may point outside ``cells``; the tape is padded with blanks.
    """
    cells = list(cells)
    if head < 0:
        cells = [blank] * (-head) + cells
        head = 0
    if head >= len(cells):
        cells = cells + [blank] * (head - len(cells) + 1)
    left = _trim(cells[:head][::-1], blank)
    right = _trim(cells[head + 1:], blank)
    return TMConfiguration(left, cells[head], right, state)


def initial_config(machine: TuringMachine, tape: Sequence[str] | str = (), head: int = 0) -> TMConfiguration:
    if isinstance(tape, str):
        tape = tape.split() if " " in tape else list(tape)
    for sym in tape:
        if sym not in machine.alphabet:
            raise UndeclaredSymbol(f"tape symbol {sym!r} not in machine alphabet")
    return make_config(tape, head, machine.start, machine.blank)


def tm_step(machine: TuringMachine, config: TMConfiguration) -> TMConfiguration | Halted:
    tr = machine.transition(config.state, config.head)
    if tr is None:
        return HALTED
    write, move, nxt = tr
    blank = machine.blank
    if move == "R":
        left = _trim((write,) + config.left, blank)
        if config.right:
            return TMConfiguration(left, config.right[0], config.right[1:], nxt)
        return TMConfiguration(left, blank, (), nxt)
    right = _trim((write,) + config.right, blank)
    if config.left:
        return TMConfiguration(config.left[1:], config.left[0], right, nxt)
    return TMConfiguration((), blank, right, nxt)


@dataclass
class TMTrace:
    configs: list[TMConfiguration]
    halted: bool

    def __len__(self) -> int:
        return len(self.configs)

    @property
    def steps(self) -> int:
        return len(self.configs) - 1

    @property
    def final(self) -> TMConfiguration:
        return self.configs[-1]


def tm_run(machine: TuringMachine, config: TMConfiguration, max_steps: int) -> TMTrace:
    if max_steps < 0:
        raise ValueError("max_steps must be non-negative")
    configs = [config]
    for _ in range(max_steps):
        nxt = tm_step(machine, configs[-1])
        if nxt is HALTED:
            return TMTrace(configs, True)
        configs.append(nxt)
    return TMTrace(configs, tm_step(machine, configs[-1]) is HALTED)


def write_tm_trace_jsonl(trace: TMTrace, fp: IO[str]) -> None:
    for k, c in enumerate(trace.configs):
        fp.write(json.dumps({"step": k, **c.to_json()}) + "\n")


# -- text format --------------------------------------------------------------

_HEADERS = ("states", "alphabet", "blank", "start", "halt")


def parse_tm(text: str, strict: bool = False) -> TuringMachine:
    """Parse the header/transition text format.

    Header lines are ``key: values``; transitions are ``q a -> b M q2``.
    With ``strict`` every (non-halting state, symbol) pair must have a
    transition; otherwise a missing entry halts the machine.
    """
    header: dict[str, list[str]] = {}
    trans: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.match(r"^([A-Za-z]+)\s*:(.*)$", line)
        if m and "->" not in line:
            key = m.group(1).lower()
            if key not in _HEADERS:
                raise ParseError(f"unknown header {key!r}", lineno)
            if key in header:
                raise ParseError(f"duplicate header {key!r}", lineno)
            header[key] = m.group(2).replace(",", " ").split()
            continue
        toks = line.split()
        if len(toks) != 6 or toks[2] != "->":
            raise ParseError("expected transition 'q a -> b M q2'", lineno)
        trans.append((lineno, toks))

    for key in ("states", "alphabet", "blank", "start"):
        if key not in header or not header[key]:
            raise ParseError(f"missing header {key!r}")
    for key in ("blank", "start"):
        if len(header[key]) != 1:
            raise ParseError(f"header {key!r} takes exactly one value")
    states = tuple(header["states"])
    alphabet = tuple(header["alphabet"])
    blank, start = header["blank"][0], header["start"][0]
    halting = tuple(header.get("halt", ()))
    for name in states + alphabet:
        if not NAME_RE.match(name):
            raise ParseError(f"name {name!r} must match {NAME_RE.pattern}")
    if len(set(states)) != len(states) or len(set(alphabet)) != len(alphabet):
        raise ParseError("states and alphabet entries must be distinct")
    if blank not in alphabet:
        alphabet = (blank,) + alphabet
    for q in (start,) + halting:
        if q not in states:
            raise UndeclaredSymbol(f"state {q!r} is not declared")

    table: dict[tuple[str, str], tuple[str, str, str]] = {}
    for lineno, (q, a, _, b, mv, q2) in trans:
        for st in (q, q2):
            if st not in states:
                raise UndeclaredSymbol(f"state {st!r} is not declared", lineno)
        for sym in (a, b):
            if sym not in alphabet:
                raise UndeclaredSymbol(f"symbol {sym!r} is not declared", lineno)
        if mv not in MOVES:
            raise ParseError(f"move must be L or R, got {mv!r}", lineno)
        if q in halting:
            raise ParseError(f"halting state {q!r} has a transition", lineno)
        if (q, a) in table:
            raise ParseError(f"duplicate transition for ({q}, {a})", lineno)
        table[(q, a)] = (b, mv, q2)

    machine = TuringMachine(states, alphabet, blank, start, frozenset(halting), table)
    if strict:
        missing = machine.missing_transitions()
        if missing:
            raise ParseError(f"strict mode: missing transitions {missing[:5]}")
    return machine


def format_tm(machine: TuringMachine) -> str:
    lines = [
        f"states: {' '.join(machine.states)}",
        f"alphabet: {' '.join(machine.alphabet)}",
        f"blank: {machine.blank}",
        f"start: {machine.start}",
        f"halt: {' '.join(sorted(machine.halting))}",
    ]
    for (q, a), (b, mv, q2) in sorted(machine.transitions.items()):
        lines.append(f"{q} {a} -> {b} {mv} {q2}")
    return "\n".join(lines) + "\n"


def load_tm(path, strict: bool = False) -> TuringMachine:
    with open(path, encoding="utf-8") as fh:
        return parse_tm(fh.read(), strict=strict)


def reachable_configs(
    machine: TuringMachine, starts: Iterable[TMConfiguration], max_steps: int
) -> list[TMConfiguration]:
    """All configurations met within ``max_steps`` from any start, deduplicated in order."""
    seen: dict[TMConfiguration, None] = {}
    for c in starts:
        for cfg in tm_run(machine, c, max_steps).configs:
            seen.setdefault(cfg, None)
    return list(seen)
