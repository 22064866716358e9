"""Frozen, randomly initialized recurrent and attention networks.

Both networks map a sequence of d-dimensional codewords to one raw
d-dimensional output.  Parameters are drawn once from a seeded Gaussian and
are read-only afterwards.  ``forward_batch`` / ``backward_input`` give the
trainer gradients with respect to the *inputs* only; nothing here ever
computes a parameter gradient.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..core import Codebook
from ..errors import DimensionMismatch, EmptyCodebook
from ..harness import VECTOR, ModelBackend

LN_EPS = 1e-5


def quantize(vector, codebook: Codebook):
    """Nearest codeword by L2 distance, ties to the lowest symbol id."""
    if not codebook.entries:
        raise EmptyCodebook("codebook has no codewords")
    sym = codebook.nearest(vector)
    return sym, codebook.encode(sym)


def layer_norm(x: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    return xc * inv, inv


def layer_norm_backward(du: np.ndarray, u: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return inv * (du - du.mean(axis=-1, keepdims=True) - u * (du * u).mean(axis=-1, keepdims=True))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class FrozenNetBackend(ModelBackend):
    kind = VECTOR
    share_safe = True
    arch = "net"

    def __init__(self, d: int, seed: int, context_window: int):
        if d < 1:
            raise ValueError("dimension must be positive")
        self.d = d
        self.seed = seed
        self.context_window = context_window
        self.params: dict[str, np.ndarray] = {}

    def parameter_hash(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].tobytes())
        return h.hexdigest()

    def describe(self) -> dict:
        return {
            **super().describe(),
            "arch": self.arch,
            "d": self.d,
            "seed": self.seed,
            "parameters": self.parameter_hash(),
        }

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[-1] != self.d:
            raise DimensionMismatch(f"expected (..., T, {self.d}) inputs, got shape {X.shape}")
        if X.shape[1] < 1:
            raise DimensionMismatch("input sequence must be non-empty")
        return X

    def net_forward(self, sequence) -> np.ndarray:
        """Raw output vector for one codeword sequence."""
        return self.forward_batch(sequence)[0][0]

    def next_output(self, context):
        return self.net_forward(context)

    def forward_batch(self, X):
        raise NotImplementedError

    def backward_input(self, cache, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class RandomRecurrentBackend(FrozenNetBackend):
    """``state_t = tanh(W_rec state_{t-1} + W_in x_t + b)``, output ``W_out state_T + c``."""

    arch = "rnn"

    def __init__(self, d: int, seed: int = 0, bias_scale: float = 1.0, context_window: int = 64):
        super().__init__(d, seed, context_window)
        rng = np.random.default_rng([seed, d, 1])
        s = 1.0 / np.sqrt(d)
        self.params = {
            "W_in": _frozen(rng.normal(0.0, s, (d, d))),
            "W_rec": _frozen(rng.normal(0.0, s, (d, d))),
            "b": _frozen(rng.normal(0.0, s * bias_scale, d)),
            "W_out": _frozen(rng.normal(0.0, s, (d, d))),
            "c": _frozen(rng.normal(0.0, s * bias_scale, d)),
        }

    def forward_batch(self, X):
        X = self._check(X)
        p = self.params
        B, T, d = X.shape
        states = np.zeros((T + 1, B, d))
        for t in range(T):
            states[t + 1] = np.tanh(states[t] @ p["W_rec"].T + X[:, t] @ p["W_in"].T + p["b"])
        y = states[T] @ p["W_out"].T + p["c"]
        return y, (states, T)

    def backward_input(self, cache, dy):
        states, T = cache
        p = self.params
        dX = np.zeros((states.shape[1], T, self.d))
        dh = dy @ p["W_out"]
        for t in range(T, 0, -1):
            da = dh * (1.0 - states[t] ** 2)
            dX[:, t - 1] = da @ p["W_in"]
            dh = da @ p["W_rec"]
        return dX


def attention_heads(d: int, requested: int = 8) -> int:
    """Requested head count, or the largest divisor of d below it."""
    for h in range(min(requested, d), 0, -1):
        if d % h == 0:
            return h
    return 1


class RandomAttentionBackend(FrozenNetBackend):
    """One pre-norm causal multi-head self-attention block plus a readout.

    ``z = x + P`` (frozen positional vectors), ``h = z + W_o MHA(LN(z)) + b_o``
    and the output is ``W_out h_T + c`` at the last position.
    """

    arch = "attention"

    def __init__(
        self,
        d: int,
        seed: int = 0,
        heads: int = 8,
        bias_scale: float = 1.0,
        context_window: int = 64,
        positional: bool = True,
    ):
        super().__init__(d, seed, context_window)
        self.heads = attention_heads(d, heads)
        self.dh = d // self.heads
        rng = np.random.default_rng([seed, d, 2])
        s = 1.0 / np.sqrt(d)
        pos = rng.normal(0.0, 1.0, (context_window, d)) if positional else np.zeros((context_window, d))
        self.params = {
            "P": _frozen(pos),
            "W_q": _frozen(rng.normal(0.0, s, (d, d))),
            "W_k": _frozen(rng.normal(0.0, s, (d, d))),
            "W_v": _frozen(rng.normal(0.0, s, (d, d))),
            "W_o": _frozen(rng.normal(0.0, s, (d, d))),
            "b_o": _frozen(rng.normal(0.0, s * bias_scale, d)),
            "W_out": _frozen(rng.normal(0.0, s, (d, d))),
            "c": _frozen(rng.normal(0.0, s * bias_scale, d)),
        }

    def _split(self, a: np.ndarray) -> np.ndarray:
        # (B, T, d) -> (B, H, T, dh)
        B, T, _ = a.shape
        return a.reshape(B, T, self.heads, self.dh).transpose(0, 2, 1, 3)

    def forward_batch(self, X):
        X = self._check(X)
        p = self.params
        B, T, d = X.shape
        if T > self.context_window:
            raise DimensionMismatch(f"sequence of {T} exceeds context window {self.context_window}")
        z = X + p["P"][:T]
        u, inv = layer_norm(z)
        q = (u[:, -1] @ p["W_q"].T).reshape(B, self.heads, self.dh)
        K = self._split(u @ p["W_k"].T)
        V = self._split(u @ p["W_v"].T)
        scale = 1.0 / np.sqrt(self.dh)
        s = np.einsum("bhe,bhte->bht", q, K) * scale
        s = s - s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        o = np.einsum("bht,bhte->bhe", a, V).reshape(B, d)
        h = z[:, -1] + o @ p["W_o"].T + p["b_o"]
        y = h @ p["W_out"].T + p["c"]
        return y, (u, inv, q, K, V, a, scale)

    def forward_positions(self, X) -> np.ndarray:
        """Outputs at every position under the causal mask, shape (B, T, d)."""
        X = self._check(X)
        return np.stack([self.forward_batch(X[:, : t + 1])[0] for t in range(X.shape[1])], axis=1)

    def backward_input(self, cache, dy):
        u, inv, q, K, V, a, scale = cache
        p = self.params
        B, T, d = u.shape
        dh_last = dy @ p["W_out"]
        dz = np.zeros((B, T, d))
        dz[:, -1] += dh_last
        do = (dh_last @ p["W_o"]).reshape(B, self.heads, self.dh)
        da = np.einsum("bhe,bhte->bht", do, V)
        dV = a[..., None] * do[:, :, None, :]
        ds = a * (da - (a * da).sum(axis=-1, keepdims=True)) * scale
        dq = np.einsum("bht,bhte->bhe", ds, K).reshape(B, d)
        dK = ds[..., None] * q[:, :, None, :]
        merge = lambda t: t.transpose(0, 2, 1, 3).reshape(B, T, d)  # noqa: E731
        du = merge(dK) @ p["W_k"] + merge(dV) @ p["W_v"]
        du[:, -1] += dq @ p["W_q"]
        dz += layer_norm_backward(du, u, inv)
        return dz


ARCHITECTURES = {"rnn": RandomRecurrentBackend, "attention": RandomAttentionBackend}


def make_backend(arch: str, d: int, seed: int, **kw) -> FrozenNetBackend:
    try:
        cls = ARCHITECTURES[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
    return cls(d, seed, **kw)
