"""Learn a vector codebook that makes a frozen random network follow a Lag system.

Encoder and decoder are small residual MLPs with hand-written backward
passes.  Only they are trained; the backend is read-only.  Each update is
one full-batch Adam step over every rule, with teacher forcing on
multi-symbol productions.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .backends.nets import FrozenNetBackend, layer_norm, layer_norm_backward, make_backend
from .core import VECTOR_CODE, Codebook
from .errors import NonFiniteLoss
from .lag import LagSystem

QUANTIZE_ST = "st"
QUANTIZE_IDENTITY = "identity"


@dataclass
class TrainConfig:
    step_size: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iterations: int = 20000
    seed: int = 0
    commitment_weight: float = 0.25
    distance_weight: float = 1.0
    verify_every: int = 50
    hidden_blocks: int = 2
    width_factor: int = 4
    full_verify: bool = True

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.verify_every < 1:
            raise ValueError("verify_every must be at least 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_toml(cls, path) -> "TrainConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data.get("train", data))


# -- residual MLP -------------------------------------------------------------

def init_mlp(rng: np.random.Generator, n_in: int, width: int, n_out: int, blocks: int) -> dict:
    p = {
        "W0": rng.normal(0.0, 1.0 / math.sqrt(n_in), (width, n_in)),
        "b0": np.zeros(width),
        "Wo": rng.normal(0.0, 1.0 / math.sqrt(width), (n_out, width)),
        "bo": np.zeros(n_out),
    }
    for i in range(blocks):
        p[f"W{i + 1}"] = rng.normal(0.0, 1.0 / math.sqrt(width), (width, width))
        p[f"b{i + 1}"] = np.zeros(width)
    return p


def _blocks(p: dict) -> int:
    return sum(1 for k in p if k.startswith("W")) - 2


def mlp_forward(p: dict, x: np.ndarray):
    """``h = W0 x + b0``; blocks ``h += relu(W LN(h) + b)``; out ``Wo LN(h) + bo``."""
    h = x @ p["W0"].T + p["b0"]
    cache = [x]
    for i in range(1, _blocks(p) + 1):
        u, inv = layer_norm(h)
        a = u @ p[f"W{i}"].T + p[f"b{i}"]
        cache.append((u, inv, a))
        h = h + np.maximum(a, 0.0)
    u, inv = layer_norm(h)
    cache.append((u, inv))
    return u @ p["Wo"].T + p["bo"], cache


def mlp_backward(p: dict, cache: list, dy: np.ndarray):
    g: dict[str, np.ndarray] = {}
    u, inv = cache[-1]
    g["Wo"] = dy.T @ u
    g["bo"] = dy.sum(axis=0)
    dh = layer_norm_backward(dy @ p["Wo"], u, inv)
    for i in range(_blocks(p), 0, -1):
        u, inv, a = cache[i]
        da = dh * (a > 0)
        g[f"W{i}"] = da.T @ u
        g[f"b{i}"] = da.sum(axis=0)
        dh = dh + layer_norm_backward(da @ p[f"W{i}"], u, inv)
    x = cache[0]
    g["W0"] = dh.T @ x
    g["b0"] = dh.sum(axis=0)
    return g, dh @ p["W0"]


# -- data ---------------------------------------------------------------------

@dataclass
class RuleData:
    """Teacher-forced contexts grouped by length.

    ``groups`` maps a context length T to ``(contexts (B, T), targets (B,))``
    of symbol ids.  Every rule ``s1 s2 -> t1 [t2]`` yields one example per
    output codeword including the final halt.
    """

    n_symbols: int
    halt: int
    groups: dict[int, tuple[np.ndarray, np.ndarray]]

    @property
    def n_examples(self) -> int:
        return sum(len(t) for _, t in self.groups.values())


def rule_data(system: LagSystem, rules: Iterable | None = None) -> RuleData:
    halt = system.alphabet.halt
    by_len: dict[int, tuple[list, list]] = {}
    for r in system.sorted_rules() if rules is None else rules:
        ctx = list(r.lhs)
        for t in [*r.rhs, halt]:
            xs, ys = by_len.setdefault(len(ctx), ([], []))
            xs.append(list(ctx))
            ys.append(t)
            ctx.append(t)
    groups = {
        T: (np.asarray(xs, dtype=np.int64), np.asarray(ys, dtype=np.int64))
        for T, (xs, ys) in sorted(by_len.items())
    }
    return RuleData(len(system.alphabet), halt, groups)


# -- loss ---------------------------------------------------------------------

def _softmax_ce(scores: np.ndarray, targets: np.ndarray):
    z = scores - scores.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sm = ez / ez.sum(axis=1, keepdims=True)
    logp = z - np.log(ez.sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(targets)), targets].sum()
    d = sm
    d[np.arange(len(targets)), targets] -= 1.0
    return loss, d


@dataclass
class Params:
    encoder: dict
    decoder: dict

    def flat(self) -> dict:
        return {**{f"enc.{k}": v for k, v in self.encoder.items()}, **{f"dec.{k}": v for k, v in self.decoder.items()}}

    def copy(self) -> "Params":
        return Params({k: v.copy() for k, v in self.encoder.items()}, {k: v.copy() for k, v in self.decoder.items()})


def init_params(n_symbols: int, d: int, seed: int, width_factor: int = 4, blocks: int = 2) -> Params:
    rng = np.random.default_rng([seed, d, 7])
    width = width_factor * d
    return Params(
        init_mlp(rng, n_symbols, width, d, blocks),
        init_mlp(rng, d, width, n_symbols, blocks),
    )


def codewords(params: Params, n_symbols: int) -> np.ndarray:
    return mlp_forward(params.encoder, np.eye(n_symbols))[0]


def _sq_dists(v: np.ndarray, E: np.ndarray) -> np.ndarray:
    return (v * v).sum(1)[:, None] - 2.0 * v @ E.T + (E * E).sum(1)[None, :]


def loss_and_grads(
    params: Params,
    backend: FrozenNetBackend,
    data: RuleData,
    config: TrainConfig,
    quantize: str = QUANTIZE_ST,
    fixed_q: np.ndarray | None = None,
):
    """Loss and gradients for encoder and decoder parameters.

    Terms, all summed over examples:

    * cross-entropy of the decoder on the quantized output (straight-through
      in ``st`` mode, the raw output in ``identity`` mode);
    * ``commitment_weight * |v - sg(q)|^2``;
    * cross-entropy of the decoder on every codeword against its own symbol;
    * ``distance_weight`` times the cross-entropy of ``-|v - E_j|^2`` against
      the target, which pulls outputs toward the right codeword.

    ``fixed_q`` pins the stop-gradient codewords, so a finite-difference
    check sees exactly the function being differentiated.  Returns
    ``(loss, grads, aux)`` with grads keyed like :meth:`Params.flat`.
    """
    n = data.n_symbols
    enc_out, enc_cache = mlp_forward(params.encoder, np.eye(n))
    E = enc_out
    vs, caches, ctxs, targets = [], [], [], []
    for T, (ctx, tgt) in data.groups.items():
        v, cache = backend.forward_batch(E[ctx])
        vs.append(v)
        caches.append(cache)
        ctxs.append(ctx)
        targets.append(tgt)
    v = np.concatenate(vs)
    tgt = np.concatenate(targets)
    M = len(v)

    d2 = _sq_dists(v, E)
    nearest = np.argmin(d2, axis=1)
    q = E[nearest] if fixed_q is None else fixed_q
    dec_in = q if quantize == QUANTIZE_ST else v
    scores, dec_cache = mlp_forward(params.decoder, np.concatenate([dec_in, E]))
    all_targets = np.concatenate([tgt, np.arange(n)])
    ce, dscores = _softmax_ce(scores, all_targets)
    diff = v - q
    commit = config.commitment_weight * float((diff * diff).sum())
    dist_loss, dlogits = _softmax_ce(-d2, tgt) if config.distance_weight else (0.0, None)
    loss = ce + commit + config.distance_weight * dist_loss
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss} (ce={ce}, commit={commit}, distance={dist_loss})")

    g_dec, d_dec_in = mlp_backward(params.decoder, dec_cache, dscores)
    dv = d_dec_in[:M].copy()  # straight-through: the quantizer passes gradients unchanged
    dE = d_dec_in[M:].copy()
    dv += 2.0 * config.commitment_weight * diff
    if config.distance_weight:
        dd2 = -config.distance_weight * dlogits
        dv += 2.0 * (dd2.sum(1)[:, None] * v - dd2 @ E)
        dE += 2.0 * (dd2.sum(0)[:, None] * E - dd2.T @ v)
    start = 0
    for cache, ctx in zip(caches, ctxs):
        B = len(ctx)
        dX = backend.backward_input(cache, dv[start: start + B])
        np.add.at(dE, ctx, dX)
        start += B
    g_enc, _ = mlp_backward(params.encoder, enc_cache, dE)

    grads = {**{f"enc.{k}": g for k, g in g_enc.items()}, **{f"dec.{k}": g for k, g in g_dec.items()}}
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(f"non-finite gradient for {k}")
    aux = {"q": q, "nearest": nearest, "targets": tgt, "ce": ce, "commit": commit, "distance": dist_loss}
    return float(loss), grads, aux


# -- discrete check -----------------------------------------------------------

def discrete_pass(params: Params, backend: FrozenNetBackend, data: RuleData) -> bool:
    """Teacher-forced greedy outputs all quantize to their targets.

    When every teacher-forced prediction is right, free-running greedy
    decoding reproduces them, so this is a cheap stand-in for the full
    verifier.  The codebook must also be injective and round-trip through
    the decoder.
    """
    E = codewords(params, data.n_symbols)
    if len({row.tobytes() for row in E}) != len(E):
        return False
    dec = mlp_forward(params.decoder, E)[0]
    if not np.array_equal(np.argmax(dec, axis=1), np.arange(data.n_symbols)):
        return False
    for ctx, tgt in data.groups.values():
        v = backend.forward_batch(E[ctx])[0]
        if not np.array_equal(np.argmin(_sq_dists(v, E), axis=1), tgt):
            return False
    return True


def make_codebook(params: Params, n_symbols: int, halt: int) -> Codebook:
    E = codewords(params, n_symbols)
    dec = {k: v.copy() for k, v in params.decoder.items()}

    def decoder(x):
        return mlp_forward(dec, np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]

    return Codebook(VECTOR_CODE, {i: E[i] for i in range(n_symbols)}, halt, decoder=decoder)


# -- optimizer ----------------------------------------------------------------

class Adam:
    def __init__(self, params: dict, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- training loop --------------------------------------------------------------

@dataclass
class TrainResult:
    success: bool
    iterations_to_universality: int | None
    log_time_metric: float
    max_iterations: int
    verify_every: int
    final_loss: float
    wall_seconds: float
    codebook: Codebook | None = None
    params: Params | None = None
    loss_history: list[tuple[int, float]] = field(default_factory=list)

    def row(self) -> dict:
        return {
            "success": self.success,
            "iterations": self.iterations_to_universality,
            "log_time_metric": self.log_time_metric,
        }


def log_time_metric(k: int | None, max_iterations: int) -> float:
    """``ln(k / max_iterations)`` for a success at iteration k, 0 for failure."""
    if k is None:
        return 0.0
    return math.log(k / max_iterations)


def train_codebook(backend: FrozenNetBackend, system: LagSystem, config: TrainConfig) -> TrainResult:
    from .verification import verify_rules

    t0 = time.perf_counter()
    data = rule_data(system)
    n = len(system.alphabet)
    params = init_params(n, backend.d, config.seed, config.width_factor, config.hidden_blocks)
    flat_enc, flat_dec = params.encoder, params.decoder
    opt_enc = Adam(flat_enc, config.step_size, config.beta1, config.beta2, config.eps)
    opt_dec = Adam(flat_dec, config.step_size, config.beta1, config.beta2, config.eps)
    history: list[tuple[int, float]] = []
    loss = float("nan")
    success_at = None
    codebook = None
    for it in range(1, config.max_iterations + 1):
        loss, grads, _ = loss_and_grads(params, backend, data, config)
        opt_enc.step(flat_enc, {k[4:]: g for k, g in grads.items() if k.startswith("enc.")})
        opt_dec.step(flat_dec, {k[4:]: g for k, g in grads.items() if k.startswith("dec.")})
        if it % config.verify_every == 0:
            history.append((it, loss))
            if discrete_pass(params, backend, data):
                cb = make_codebook(params, n, system.alphabet.halt)
                if not config.full_verify or verify_rules(backend, cb, (), system).ok:
                    success_at = it
                    codebook = cb
                    break
    return TrainResult(
        success=success_at is not None,
        iterations_to_universality=success_at,
        log_time_metric=log_time_metric(success_at, config.max_iterations),
        max_iterations=config.max_iterations,
        verify_every=config.verify_every,
        final_loss=loss,
        wall_seconds=time.perf_counter() - t0,
        codebook=codebook if codebook is not None else make_codebook(params, n, system.alphabet.halt),
        params=params,
        loss_history=history,
    )


# -- sweeps ---------------------------------------------------------------------

SWEEP_FIELDS = ["arch", "d", "seed", "success", "iterations", "log_time_metric", "wall_seconds"]


def sweep(
    architectures: Sequence[str],
    dimensions: Sequence[int],
    seeds: Sequence[int],
    system: LagSystem,
    config: TrainConfig,
    workers: int = 1,
    backend_kwargs: dict | None = None,
) -> list[dict]:
    """One row per (arch, d, seed), in that nested order.

    Each row seeds both the backend and the codebook networks from its own
    seed, so rows are independent of each other and of scheduling.  A
    failing row records the error and the sweep continues.
    """
    jobs = [(a, d, s) for a in architectures for d in dimensions for s in seeds]

    def one(job):
        arch, d, seed = job
        t0 = time.perf_counter()
        try:
            backend = make_backend(arch, d, seed, **(backend_kwargs or {}))
            cfg = TrainConfig(**{**asdict(config), "seed": seed})
            res = train_codebook(backend, system, cfg)
            row = {"arch": arch, "d": d, "seed": seed, **res.row(), "error": ""}
        except Exception as exc:  # recorded, the sweep goes on
            row = {"arch": arch, "d": d, "seed": seed, "success": False, "iterations": None,
                   "log_time_metric": 0.0, "error": f"{type(exc).__name__}: {exc}"}
        row["wall_seconds"] = round(time.perf_counter() - t0, 3)
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


def sweep_csv(rows: Sequence[dict], include_wall: bool = True) -> str:
    cols = SWEEP_FIELDS + ["error"] if include_wall else [c for c in SWEEP_FIELDS if c != "wall_seconds"] + ["error"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        out = dict(r)
        out["iterations"] = "" if out.get("iterations") is None else out["iterations"]
        out["log_time_metric"] = f"{out['log_time_metric']:.6f}"
        out["success"] = str(bool(out["success"])).lower()
        w.writerow(out)
    return buf.getvalue()
