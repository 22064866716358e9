"""Turing machine to lag-2 / deletion-1 Lag system compiler.

A TM configuration is laid out as the queue ``c_1 .. c_L #``, read
cyclically.  Cell symbols are a plain tape symbol ``a``, the head ``a@q``
and, after a left move, a *vacated* cell ``a!q`` that tells its left
neighbour which state arrives there.  One TM step takes two passes over
the queue:

* pass A: every cell ``x`` reading its right neighbour emits the pair
  ``<x,y>``, so after one rotation each symbol knows its right neighbour;
* pass B: ``<x,y>`` reading ``<y,z>`` has the whole window ``x y z`` and
  emits the new content of ``y``.  The last pair of the pass reads the
  first pass-B output instead, which is why left moves leave a vacated
  flag behind.

The tape grows only at ``#``.  A string with no pair symbols is a
*checkpoint* and decodes to a TM configuration.  Heads whose transition is
missing (or whose state halts) have no pass-A rules, so a halted machine
ends the Lag run with NoRuleMatch.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Alphabet
from .errors import ForeignSymbol, UnsupportedMachine
from .lag import DEFAULT_HALT, LagSystem, LagTrace, ProductionRule, run
from .tm import NAME_RE, TMConfiguration, TuringMachine, make_config

END = "#"
CHECKPOINT_FORMAT_VERSION = 1


def head_label(q: str, a: str) -> str:
    return f"{a}@{q}"


def vacated_label(q: str, a: str) -> str:
    return f"{a}!{q}"


def pair_label(x: str, y: str) -> str:
    return f"<{x},{y}>"


@dataclass(frozen=True)
class _Cell:
    """Decoded view of a non-pair symbol."""

    kind: str  # "tape", "head", "vacated", "end"
    tape: str | None = None
    state: str | None = None

    def stripped(self) -> "_Cell":
        return _Cell("tape", self.tape) if self.kind == "vacated" else self

    def label(self) -> str:
        if self.kind == "end":
            return END
        if self.kind == "head":
            return head_label(self.state, self.tape)
        if self.kind == "vacated":
            return vacated_label(self.state, self.tape)
        return self.tape


_END = _Cell("end")


class CompiledLag:
    """A compiled system together with its configuration maps."""

    def __init__(self, machine: TuringMachine, system: LagSystem):
        self.machine = machine
        self.system = system
        self.alphabet = system.alphabet
        info: list = [None] * len(self.alphabet)
        self._pair = np.zeros(len(self.alphabet), dtype=bool)
        for sym in self.alphabet.symbols:
            lab = sym.display
            if sym.id == self.alphabet.halt:
                continue
            if lab.startswith("<"):
                self._pair[sym.id] = True
                info[sym.id] = "pair"
            elif lab == END:
                info[sym.id] = _END
            elif "@" in lab:
                a, q = lab.split("@")
                info[sym.id] = _Cell("head", a, q)
            elif "!" in lab:
                a, q = lab.split("!")
                info[sym.id] = _Cell("vacated", a, q)
            else:
                info[sym.id] = _Cell("tape", lab)
        self._info = info

    @property
    def stats(self) -> dict:
        return self.system.stats()

    def encode_labels(self, config: TMConfiguration) -> list[str]:
        cells = [*reversed(config.left)]
        cells.append(head_label(config.state, config.head))
        cells.extend(config.right)
        return cells + [END]

    def encode_config(self, config: TMConfiguration) -> tuple[int, ...]:
        for sym in (*config.left, config.head, *config.right):
            if sym not in self.machine.alphabet:
                raise ForeignSymbol(f"tape symbol {sym!r} is not in the machine alphabet")
        if config.state not in self.machine.states:
            raise ForeignSymbol(f"state {config.state!r} is not a machine state")
        return self.alphabet.ids(self.encode_labels(config))

    def is_checkpoint(self, string: Sequence[int]) -> bool:
        s = self.alphabet.check_string(string)
        return not any(self._pair[x] for x in s)

    def decode_config(self, string: Sequence[int]) -> TMConfiguration | None:
        s = self.alphabet.check_string(string)
        if not s or any(self._pair[x] for x in s):
            return None
        cells = [self._info[x] for x in s]
        if any(c is None for c in cells):  # halt symbol
            return None
        ends = [i for i, c in enumerate(cells) if c.kind == "end"]
        heads = [i for i, c in enumerate(cells) if c.kind == "head"]
        if len(ends) != 1 or len(heads) != 1:
            return None
        e = ends[0]
        ring = cells[e + 1:] + cells[:e]
        h = next(i for i, c in enumerate(ring) if c.kind == "head")
        tape = [c.stripped().tape for c in ring]
        return make_config(tape, h, ring[h].state, self.machine.blank)

    def macro_bound(self, config: TMConfiguration) -> int:
        """Lag steps from ``encode_config(config)`` to the next checkpoint."""
        return 2 * (len(config.left) + len(config.right) + 2)

    def checkpoint_indices(self, trace: LagTrace) -> np.ndarray:
        """Indices k (ascending) where ``trace[k]`` contains no pair symbols."""
        is_pair = self._pair[trace.stream].astype(np.int64)
        cs = np.concatenate(([0], np.cumsum(is_pair)))
        starts = np.arange(len(trace)) * trace.deletion
        counts = cs[starts + trace.lengths] - cs[starts]
        return np.flatnonzero(counts == 0)

    def reduce(self, inputs: Iterable[Sequence[int]], max_steps: int) -> "CompiledLag":
        """Keep only the rules applied while running from ``inputs``."""
        used: dict[tuple[int, ...], tuple[int, ...]] = {}
        symbols: set[int] = set()
        for s0 in inputs:
            trace = run(self.system, s0, max_steps)
            end = trace.deletion * trace.steps + int(trace.lengths[-1])
            symbols.update(int(x) for x in np.unique(trace.stream[:end]))
            st = trace.stream
            for k in range(trace.steps):
                lhs = (int(st[k]), int(st[k + 1]))
                used[lhs] = self.system.table[lhs]
        for lhs, rhs in used.items():
            symbols.update(lhs)
            symbols.update(rhs)
        symbols.add(self.alphabet.halt)
        symbols.add(self.alphabet.id(END))
        keep = sorted(symbols)
        labels = [self.alphabet.label(i) for i in keep]
        remap = {old: new for new, old in enumerate(keep)}
        alpha = Alphabet(labels, self.alphabet.label(self.alphabet.halt), END)
        rules = [
            ProductionRule(tuple(remap[x] for x in lhs), tuple(remap[x] for x in rhs))
            for lhs, rhs in sorted(used.items())
        ]
        return CompiledLag(self.machine, LagSystem(alpha, rules))

    def sidecar(self) -> dict:
        return {
            "stats": self.stats,
            "alphabet": self.alphabet.to_json(),
            "end_marker": END,
            "checkpoint_format_version": CHECKPOINT_FORMAT_VERSION,
        }

    def write(self, rule_path, sidecar_path=None) -> None:
        from .lag import format_rules

        with open(rule_path, "w", encoding="utf-8") as fh:
            fh.write(format_rules(self.system))
        sidecar_path = sidecar_path or f"{rule_path}.json"
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)


def _check_machine(machine: TuringMachine) -> None:
    for name in (*machine.states, *machine.alphabet):
        if not NAME_RE.match(name):
            raise UnsupportedMachine(f"name {name!r} uses reserved characters")
    if machine.blank not in machine.alphabet:
        raise UnsupportedMachine("blank symbol is not in the tape alphabet")
    for (q, a), (b, mv, q2) in machine.transitions.items():
        if mv not in ("L", "R"):
            raise UnsupportedMachine(f"transition ({q}, {a}) uses move {mv!r}; only L and R are supported")
        if q in machine.halting:
            raise UnsupportedMachine(f"halting state {q!r} has a transition")
        if q not in machine.states or q2 not in machine.states:
            raise UnsupportedMachine(f"transition ({q}, {a}) references an undeclared state")
        if a not in machine.alphabet or b not in machine.alphabet:
            raise UnsupportedMachine(f"transition ({q}, {a}) references an undeclared symbol")


def compile_machine(machine: TuringMachine, halt: str = DEFAULT_HALT) -> CompiledLag:
    _check_machine(machine)
    tr = machine.transition
    gamma = list(machine.alphabet)
    tape = [_Cell("tape", a) for a in gamma]
    heads = [_Cell("head", a, q) for q in machine.states for a in gamma]
    live_heads = [h for h in heads if tr(h.state, h.tape) is not None]
    left_targets = sorted(
        {(b, q2) for (b, mv, q2) in machine.transitions.values() if mv == "L"},
        key=lambda t: (gamma.index(t[0]), machine.states.index(t[1])),
    )
    vacated = [_Cell("vacated", b, q2) for b, q2 in left_targets]

    # Stripped cells that can sit inside a pair: nothing terminal.
    inner = tape + live_heads + [_END]
    pair_lab = {(x, y): pair_label(x.label(), y.label()) for x in inner for y in inner}

    labels = [c.label() for c in tape + [_END] + heads + vacated]
    labels += list(pair_lab.values())
    labels.append(halt)
    alpha = Alphabet(labels, halt, END)
    sid = alpha.id

    def e_right(x: _Cell) -> str | None:
        if x.kind == "head":
            b, mv, q2 = tr(x.state, x.tape)
            return q2 if mv == "R" else None
        return None

    def e_left(z: _Cell) -> str | None:
        if z.kind == "head":
            b, mv, q2 = tr(z.state, z.tape)
            return q2 if mv == "L" else None
        return None

    def new_content(inc_r: str | None, y: _Cell, inc_l: str | None) -> list[str] | None:
        if inc_r is not None and inc_l is not None:
            return None
        incoming = inc_r if inc_r is not None else inc_l
        if y.kind == "end":
            if inc_r is not None:
                return [head_label(inc_r, machine.blank), END]
            if inc_l is not None:
                return [END, head_label(inc_l, machine.blank)]
            return [END]
        if y.kind == "head":
            if incoming is not None:
                return None
            b, mv, q2 = tr(y.state, y.tape)
            return [vacated_label(q2, b) if mv == "L" else b]
        if incoming is not None:
            return [head_label(incoming, y.tape)]
        return [y.tape]

    rules: list[ProductionRule] = []

    # pass A
    readers = tape + live_heads + vacated + [_END]
    for x in readers:
        xs = x.stripped()
        for y in readers:
            rules.append(ProductionRule((sid(x.label()), sid(y.label())), (sid(pair_lab[xs, y.stripped()]),)))
        for (y, z), plab in pair_lab.items():
            rules.append(ProductionRule((sid(x.label()), sid(plab)), (sid(pair_lab[xs, y]),)))

    # pass B, interior: <x,y> reading <y,z>
    for x, y, z in itertools.product(inner, repeat=3):
        out = new_content(e_right(x), y, e_left(z))
        if out is not None:
            rules.append(ProductionRule((sid(pair_lab[x, y]), sid(pair_lab[y, z])), alpha.ids(out)))

    # pass B, wrap: <x,y> reading the first pass-B output w
    for (x, y), plab in pair_lab.items():
        for w in tape + heads + vacated + [_END]:
            inc_l = w.state if w.kind == "vacated" else None
            out = new_content(e_right(x), y, inc_l)
            if out is not None:
                rules.append(ProductionRule((sid(plab), sid(w.label())), alpha.ids(out)))

    return CompiledLag(machine, LagSystem(alpha, rules))



def load_compiled(machine: TuringMachine, rule_path, sidecar_path=None) -> CompiledLag:
    from .lag import load_system

    return CompiledLag(machine, load_system(rule_path, sidecar_path))
