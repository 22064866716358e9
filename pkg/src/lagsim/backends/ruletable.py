"""Exact oracle backend that answers straight from a Lag rule table."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..core import TOKEN_CODE, Codebook
from ..harness import TOKEN, VECTOR, ModelBackend
from ..lag import LagSystem


class RuleTableBackend(ModelBackend):
    """Replies ``E(t1) [E(t2)] E(h)`` to the context ``S E(s1) E(s2)``.

    ``overrides`` replaces the right-hand side of chosen rules and is the
    fault-injection hook.  Contexts that do not parse, or whose pair has no
    rule, get no reply at all (``None``).
    """

    def __init__(
        self,
        system: LagSystem,
        codebook: Codebook,
        system_prompt: Sequence = (),
        context_window: int = 64,
        overrides: Mapping[tuple[int, int], Sequence[int]] | None = None,
    ):
        self.system = system
        self.codebook = codebook
        self.kind = TOKEN if codebook.kind == TOKEN_CODE else VECTOR
        self.prompt_len = len(system_prompt)
        self.context_window = context_window
        self.table = dict(system.table)
        for lhs, rhs in (overrides or {}).items():
            self.table[tuple(lhs)] = tuple(rhs)
        self.overrides = {tuple(k): tuple(v) for k, v in (overrides or {}).items()}
        self._responses: dict[tuple[int, int], list] = {}

    def describe(self) -> dict:
        return {
            **super().describe(),
            "system": self.system.digest(),
            "overrides": {f"{a} {b}": list(v) for (a, b), v in sorted(self.overrides.items())},
        }

    def response(self, s1: int, s2: int) -> list | None:
        """Full reply for the pair, as tokens or codeword vectors."""
        key = (s1, s2)
        if key not in self._responses:
            rhs = self.table.get(key)
            if rhs is None:
                self._responses[key] = None
            else:
                out = [*rhs, self.codebook.halt]
                if self.kind == TOKEN:
                    self._responses[key] = self.codebook.encode_string(out)
                else:
                    self._responses[key] = [self.codebook.encode(s) for s in out]
        return self._responses[key]

    def _split(self, context: Sequence):
        body = list(context)[self.prompt_len:]
        cb = self.codebook
        if self.kind == VECTOR:
            if len(body) < 2:
                return None
            return cb.nearest(body[0]), cb.nearest(body[1]), len(body) - 2
        syms: list[int] = []
        buf: list = []
        i = 0
        while len(syms) < 2 and i < len(body):
            buf.append(body[i])
            i += 1
            sym = cb.lookup(buf)
            if sym is not None:
                syms.append(sym)
                buf = []
            elif not cb.is_proper_prefix(buf):
                return None
        if len(syms) < 2:
            return None
        return syms[0], syms[1], len(body) - i

    def next_output(self, context: Sequence):
        parsed = self._split(context)
        if parsed is None:
            return None
        s1, s2, produced = parsed
        reply = self.response(s1, s2)
        if reply is None or produced >= len(reply):
            return None
        if self.kind == TOKEN:
            # the partial output must be a prefix of the reply
            tail = list(context)[len(context) - produced:] if produced else []
            if tail != reply[:produced]:
                return None
        return reply[produced] if self.kind == TOKEN else np.array(reply[produced])

    def complete(self, context, max_outputs, done):
        parsed = self._split(context)
        if parsed is None or parsed[2] != 0:
            return super().complete(context, max_outputs, done)
        reply = self.response(parsed[0], parsed[1])
        if reply is None:
            return []
        out = []
        for tok in reply[:max_outputs]:
            out.append(tok)
            if done(out):
                break
        return out
