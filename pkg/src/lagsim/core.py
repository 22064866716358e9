"""Alphabets, symbol strings and codebooks.

Symbols are interned integers.  Labels only exist for display and file
formats; nothing in the engines looks inside a label.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCodebook, ForeignSymbol, InsufficientTokens, ParseError

TOKEN_CODE = "token_code"
VECTOR_CODE = "vector_code"


@dataclass(frozen=True)
class Symbol:
    id: int
    display: str


class Alphabet:
    """Ordered, immutable set of symbols with a designated halt symbol.

    The optional end marker is an ordinary symbol that the compiler uses as
    the queue origin.
    """

    __slots__ = ("symbols", "halt", "end_marker", "_by_label")

    def __init__(self, labels: Sequence[str], halt: str, end_marker: str | None = None):
        labels = list(labels)
        if len(labels) < 2:
            raise ValueError("an alphabet needs at least two symbols")
        by_label: dict[str, int] = {}
        for i, lab in enumerate(labels):
            if not lab or any(c.isspace() for c in lab):
                raise ValueError(f"invalid symbol label {lab!r}")
            if lab in by_label:
                raise ValueError(f"duplicate symbol label {lab!r}")
            by_label[lab] = i
        if halt not in by_label:
            raise ValueError(f"halt symbol {halt!r} not in alphabet")
        if end_marker is not None:
            if end_marker not in by_label:
                raise ValueError(f"end marker {end_marker!r} not in alphabet")
            if end_marker == halt:
                raise ValueError("end marker must differ from the halt symbol")
        self.symbols = tuple(Symbol(i, lab) for i, lab in enumerate(labels))
        self.halt = by_label[halt]
        self.end_marker = by_label[end_marker] if end_marker is not None else None
        self._by_label = by_label

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, sym_id) -> bool:
        return isinstance(sym_id, (int, np.integer)) and 0 <= sym_id < len(self.symbols)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Alphabet)
            and self.labels == other.labels
            and self.halt == other.halt
            and self.end_marker == other.end_marker
        )

    def __hash__(self) -> int:
        return hash((self.labels, self.halt, self.end_marker))

    def __repr__(self) -> str:
        return f"Alphabet({len(self)} symbols, halt={self.label(self.halt)!r})"

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.display for s in self.symbols)

    def id(self, label: str) -> int:
        try:
            return self._by_label[label]
        except KeyError:
            raise ForeignSymbol(f"symbol {label!r} is not in the alphabet") from None

    def label(self, sym_id: int) -> str:
        return self.symbols[sym_id].display

    def ids(self, labels: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.id(lab) for lab in labels)

    def render(self, string: Iterable[int]) -> list[str]:
        return [self.symbols[i].display for i in string]

    def check_string(self, string: Iterable[int]) -> tuple[int, ...]:
        out = tuple(int(s) for s in string)
        n = len(self.symbols)
        for s in out:
            if not 0 <= s < n:
                raise ForeignSymbol(f"symbol id {s} is not in the alphabet")
        return out

    def parse_string(self, text: str) -> tuple[int, ...]:
        """Whitespace-separated labels to a symbol string."""
        return self.ids(text.split())

    def to_json(self) -> dict:
        return {
            "symbols": list(self.labels),
            "halt": self.label(self.halt),
            "end_marker": None if self.end_marker is None else self.label(self.end_marker),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Alphabet":
        return cls(obj["symbols"], obj["halt"], obj.get("end_marker"))


@dataclass(frozen=True)
class TokenAlphabet:
    tokens: tuple
    halt_token: object = None

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("tokens must be pairwise distinct")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Violation:
    kind: str
    symbols: tuple[int, ...]
    message: str


class Codebook:
    """Injective map from symbols to codewords plus its inverse.

    ``token_code`` codewords are tuples of opaque tokens; ``vector_code``
    codewords are float64 vectors decoded by nearest codeword (ties go to the
    lowest symbol id).  A vector codebook may carry a learned ``decoder``
    mapping a vector to per-symbol scores; when present its argmax must agree
    on every codeword.
    """

    def __init__(
        self,
        kind: str,
        entries: Mapping[int, object],
        halt: int,
        decoder: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        if kind not in (TOKEN_CODE, VECTOR_CODE):
            raise ValueError(f"unknown codebook kind {kind!r}")
        self.kind = kind
        self.halt = int(halt)
        self.decoder = decoder
        if kind == TOKEN_CODE:
            self.entries = {int(k): tuple(v) for k, v in entries.items()}
            self._inverse: dict[tuple, int] = {}
            for sym in sorted(self.entries):
                self._inverse.setdefault(self.entries[sym], sym)
            self._prefixes = {
                cw[:i] for cw in self.entries.values() for i in range(1, len(cw))
            }
            self.max_width = max((len(cw) for cw in self.entries.values()), default=0)
        else:
            ids = sorted(int(k) for k in entries)
            self._ids = np.asarray(ids, dtype=np.int64)
            if ids:
                mat = np.array([np.asarray(entries[i], dtype=np.float64) for i in ids])
                if mat.ndim != 2:
                    mat = mat.reshape(len(ids), -1)
            else:
                mat = np.zeros((0, 0))
            mat.setflags(write=False)
            self._matrix = mat
            self.entries = {i: mat[j] for j, i in enumerate(ids)}
            self.max_width = 1

    # -- encoding -----------------------------------------------------------
    def encode(self, sym: int):
        try:
            return self.entries[int(sym)]
        except KeyError:
            raise ForeignSymbol(f"symbol id {sym} has no codeword") from None

    def encode_string(self, string: Iterable[int]) -> list:
        """Token codes flatten to one token list; vector codes give a list of vectors."""
        if self.kind == TOKEN_CODE:
            out: list = []
            for s in string:
                out.extend(self.encode(s))
            return out
        return [self.encode(s) for s in string]

    @property
    def dimension(self) -> int:
        if self.kind != VECTOR_CODE:
            raise TypeError("token codebooks have no dimension")
        return self._matrix.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def symbol_ids(self) -> np.ndarray:
        return self._ids

    # -- decoding -----------------------------------------------------------
    def lookup(self, codeword) -> int | None:
        """Exact inverse for token codewords; nearest codeword for vectors."""
        if self.kind == TOKEN_CODE:
            return self._inverse.get(tuple(codeword))
        return self.nearest(codeword)

    def is_proper_prefix(self, tokens: Sequence) -> bool:
        return tuple(tokens) in self._prefixes

    def parse(self, tokens: Sequence) -> list[int]:
        """Split a flat token stream into symbols; raises ParseError on leftovers."""
        if self.kind != TOKEN_CODE:
            raise TypeError("parse applies to token codebooks")
        out: list[int] = []
        buf: list = []
        for tok in tokens:
            buf.append(tok)
            sym = self._inverse.get(tuple(buf))
            if sym is not None:
                out.append(sym)
                buf = []
            elif tuple(buf) not in self._prefixes:
                raise ParseError(f"token sequence {buf!r} is not a codeword prefix")
        if buf:
            raise ParseError(f"dangling partial codeword {buf!r}")
        return out

    def nearest(self, vector) -> int:
        if self.kind != VECTOR_CODE:
            raise TypeError("nearest applies to vector codebooks")
        if not len(self._ids):
            raise EmptyCodebook("codebook has no codewords")
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self._matrix.shape[1],):
            raise DimensionMismatch(f"vector of shape {v.shape} against codewords of dimension {self._matrix.shape[1]}")
        d2 = ((self._matrix - v) ** 2).sum(axis=1)
        # argmin returns the first minimum, and ids are sorted ascending
        return int(self._ids[int(np.argmin(d2))])

    # -- identity -----------------------------------------------------------
    def to_json(self, alphabet: Alphabet) -> dict:
        entries = []
        for sym in sorted(self.entries):
            cw = self.entries[sym]
            if self.kind == VECTOR_CODE:
                cw = [float(x) for x in cw]
            else:
                cw = list(cw)
            entries.append({"symbol": alphabet.label(sym), "codeword": cw})
        return {"kind": self.kind, "entries": entries, "halt": alphabet.label(self.halt)}

    @classmethod
    def from_json(cls, obj: Mapping, alphabet: Alphabet) -> "Codebook":
        entries = {alphabet.id(e["symbol"]): e["codeword"] for e in obj["entries"]}
        return cls(obj["kind"], entries, alphabet.id(obj["halt"]))

    def digest(self, alphabet: Alphabet) -> str:
        return sha256_json(self.to_json(alphabet))


def sha256_json(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def build_pair_codebook(alphabet: Alphabet, tokens: TokenAlphabet | Sequence) -> Codebook:
    """Assign every symbol (halt included) a distinct ordered token pair.

    Symbols are taken in id order and pairs in lexicographic order of token
    indices, so (t0,t0), (t0,t1), ... go to symbols 0, 1, ...
    """
    toks = tuple(tokens.tokens if isinstance(tokens, TokenAlphabet) else tokens)
    if len(set(toks)) != len(toks):
        raise ValueError("tokens must be pairwise distinct")
    n = len(alphabet)
    if len(toks) ** 2 < n:
        raise InsufficientTokens(
            f"{len(toks)} tokens give {len(toks) ** 2} pairs, need {n} "
            f"(at least {math.isqrt(n - 1) + 1} tokens)"
        )
    pairs = itertools.product(toks, repeat=2)
    entries = {sym.id: pair for sym, pair in zip(alphabet.symbols, pairs)}
    return Codebook(TOKEN_CODE, entries, alphabet.halt)


def check_codebook(codebook: Codebook, alphabet: Alphabet) -> list[Violation]:
    """Return every injectivity, round-trip and prefix violation (empty = valid)."""
    out: list[Violation] = []
    lab = alphabet.label
    for sym in alphabet.symbols:
        if sym.id not in codebook.entries:
            out.append(Violation("missing", (sym.id,), f"{sym.display} has no codeword"))
    if codebook.halt != alphabet.halt:
        out.append(Violation("halt", (codebook.halt,), "codebook halt differs from alphabet halt"))

    ids = [s for s in sorted(codebook.entries) if s in alphabet]
    if codebook.kind == TOKEN_CODE:
        groups: dict[tuple, list[int]] = {}
        for s in ids:
            groups.setdefault(codebook.entries[s], []).append(s)
        for cw, syms in groups.items():
            if len(cw) == 0:
                out.append(Violation("empty", tuple(syms), f"{lab(syms[0])} has an empty codeword"))
            if len(syms) > 1:
                names = ", ".join(lab(s) for s in syms)
                out.append(Violation("injectivity", tuple(syms), f"codeword {cw!r} shared by {names}"))
        for s in ids:
            cw = codebook.entries[s]
            if cw in codebook._prefixes:
                longer = [
                    t for t in ids if t != s and codebook.entries[t][: len(cw)] == cw
                    and len(codebook.entries[t]) > len(cw)
                ]
                names = ", ".join(lab(t) for t in longer)
                out.append(
                    Violation(
                        "prefix",
                        (s, *longer),
                        f"codeword of {lab(s)} is a proper prefix of the codeword of {names}",
                    )
                )
        for s in ids:
            if len(groups[codebook.entries[s]]) == 1 and codebook.lookup(codebook.entries[s]) != s:
                out.append(Violation("round_trip", (s,), f"decode(encode({lab(s)})) != {lab(s)}"))
    else:
        mat = codebook.matrix
        if not np.all(np.isfinite(mat)):
            out.append(Violation("nonfinite", (), "codebook contains non-finite values"))
        seen: dict[bytes, list[int]] = {}
        for j, s in enumerate(codebook.symbol_ids.tolist()):
            seen.setdefault(mat[j].tobytes(), []).append(s)
        for syms in seen.values():
            if len(syms) > 1:
                names = ", ".join(lab(s) for s in syms if s in alphabet)
                out.append(Violation("injectivity", tuple(syms), f"identical codewords for {names}"))
        for s in ids:
            if codebook.nearest(codebook.entries[s]) != s:
                out.append(Violation("round_trip", (s,), f"nearest(encode({lab(s)})) != {lab(s)}"))
        if codebook.decoder is not None and ids:
            scores = np.asarray(codebook.decoder(np.stack([codebook.entries[s] for s in ids])))
            for s, row in zip(ids, scores):
                if int(np.argmax(row)) != s:
                    out.append(
                        Violation(
                            "decoder_round_trip",
                            (s,),
                            f"decoder maps encode({lab(s)}) to {lab(int(np.argmax(row)))}",
                        )
                    )
    return out
