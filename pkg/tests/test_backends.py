import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagsim.backends import RandomAttentionBackend, RandomRecurrentBackend, RuleTableBackend, make_backend, quantize
from lagsim.backends.nets import attention_heads
from lagsim.core import VECTOR_CODE, Alphabet, Codebook, build_pair_codebook
from lagsim.errors import DimensionMismatch, EmptyCodebook
from lagsim.lag import parse_rules

from oracles import straight_attention, straight_rnn

X17 = np.array([
    [-0.9891213503478509, -0.3677866514678832, 1.2879252612892487, 0.1939744191326132],
    [0.9202308996398569, 0.5771037912572513, -0.6364636463709805, 0.5419522204102933],
    [-0.3165954511658161, -0.32238911615896015, 0.09716731867045719, -1.5259304065189514],
])
# produced by the scalar-loop implementations in oracles.py
RNN17 = [-0.49608100174288977, -0.35786861602776454, -0.029107737542381884, -0.43936648152774516]
ATTN17 = [0.07428527422738385, 0.01589297958081609, -1.1571687090750553, -0.614007635154882]


def as_lists(params):
    return {k: v.tolist() for k, v in params.items()}


def test_zero_input_zero_bias_gives_zero():
    x = np.zeros((1, 5))
    assert np.array_equal(RandomRecurrentBackend(5, seed=3, bias_scale=0.0).net_forward(x), np.zeros(5))
    att = RandomAttentionBackend(5, seed=3, bias_scale=0.0, positional=False)
    assert np.allclose(att.net_forward(x), 0.0, atol=0.0)


def test_recorded_outputs_seed_17():
    rnn = RandomRecurrentBackend(4, seed=17)
    att = RandomAttentionBackend(4, seed=17)
    np.testing.assert_allclose(rnn.net_forward(X17), RNN17, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(att.net_forward(X17), ATTN17, rtol=1e-12, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 6), st.integers(0, 1000))
def test_matches_scalar_reimplementation(d, T, seed):
    xs = np.random.default_rng(seed).normal(size=(T, d))
    rnn = RandomRecurrentBackend(d, seed=seed)
    np.testing.assert_allclose(rnn.net_forward(xs), straight_rnn(as_lists(rnn.params), xs.tolist()), rtol=1e-10, atol=1e-12)
    att = RandomAttentionBackend(d, seed=seed)
    want = straight_attention(as_lists(att.params), xs.tolist(), att.heads)
    np.testing.assert_allclose(att.net_forward(xs), want, rtol=1e-9, atol=1e-11)


def test_recurrent_is_order_sensitive():
    rnn = RandomRecurrentBackend(6, seed=1)
    xs = np.random.default_rng(0).normal(size=(4, 6))
    swapped = xs[[1, 0, 2, 3]]
    assert not np.allclose(rnn.net_forward(xs), rnn.net_forward(swapped))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(0, 1000))
def test_attention_is_causal(T, seed):
    rng = np.random.default_rng(seed)
    att = RandomAttentionBackend(8, seed=seed)
    xs = rng.normal(size=(1, T, 8))
    t = int(rng.integers(0, T - 1))
    ys = xs.copy()
    ys[:, t + 1:] = rng.normal(size=ys[:, t + 1:].shape)
    a, b = att.forward_positions(xs), att.forward_positions(ys)
    np.testing.assert_array_equal(a[:, : t + 1], b[:, : t + 1])
    assert not np.allclose(a[:, -1], b[:, -1])


def test_parameters_are_frozen():
    for arch in ("rnn", "attention"):
        net = make_backend(arch, 8, 4)
        h = net.parameter_hash()
        for _ in range(5):
            net.net_forward(np.random.default_rng(1).normal(size=(3, 8)))
        assert net.parameter_hash() == h
        with pytest.raises(ValueError):
            net.params["c"][0] = 1.0
        assert make_backend(arch, 8, 4).parameter_hash() == h
        assert make_backend(arch, 8, 5).parameter_hash() != h
    with pytest.raises(ValueError):
        make_backend("lstm", 4, 0)


def test_dimension_checks():
    net = RandomRecurrentBackend(4)
    with pytest.raises(DimensionMismatch):
        net.net_forward(np.zeros((2, 3)))
    with pytest.raises(DimensionMismatch):
        net.net_forward(np.zeros((0, 4)))
    att = RandomAttentionBackend(4, context_window=3)
    with pytest.raises(DimensionMismatch):
        att.net_forward(np.zeros((4, 4)))


def test_head_counts():
    assert [attention_heads(d) for d in (1, 2, 4, 6, 7, 9, 12, 64)] == [1, 2, 4, 6, 7, 3, 6, 8]


@pytest.mark.parametrize("arch", ["rnn", "attention"])
def test_input_gradients_by_finite_differences(arch):
    net = make_backend(arch, 6, 2)
    rng = np.random.default_rng(9)
    X = rng.normal(size=(2, 4, 6))
    g = rng.normal(size=(2, 6))
    y, cache = net.forward_batch(X)
    dX = net.backward_input(cache, g)
    num = np.zeros_like(X)
    h = 1e-6
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        num[idx] = ((net.forward_batch(Xp)[0] - net.forward_batch(Xm)[0]) * g).sum() / (2 * h)
    assert np.max(np.abs(num - dX)) / np.max(np.abs(num)) < 1e-7


# -- quantization -----------------------------------------------------------

def random_codebook(n, d, seed):
    rng = np.random.default_rng(seed)
    return Codebook(VECTOR_CODE, {i: rng.normal(size=d) for i in range(n)}, n - 1)


def test_quantize_is_idempotent_and_breaks_ties_low():
    cb = random_codebook(5, 3, 0)
    for s in range(5):
        sym, cw = quantize(cb.encode(s), cb)
        assert sym == s and np.array_equal(cw, cb.encode(s))
    tie = Codebook(VECTOR_CODE, {0: [1.0, 0.0], 1: [-1.0, 0.0], 2: [5.0, 5.0]}, 2)
    assert quantize([0.0, 0.0], tie)[0] == 0
    with pytest.raises(EmptyCodebook):
        quantize([0.0], Codebook(VECTOR_CODE, {}, 0))


def test_quantize_matches_exhaustive_scan():
    cb = random_codebook(20, 4, 1)
    rng = np.random.default_rng(2)
    for v in rng.normal(size=(1000, 4)):
        best, best_d = None, None
        for s in range(20):
            dist = sum((a - b) ** 2 for a, b in zip(v, cb.encode(s)))
            if best_d is None or dist < best_d:
                best, best_d = s, dist
        assert quantize(v, cb)[0] == best


# -- rule table -------------------------------------------------------------

def test_rule_table_replies_codeword_by_codeword():
    alpha = Alphabet(["A", "B", "C", "D", "!h"], "!h")
    s = parse_rules("A B -> C\nB C -> C D", alphabet=alpha)
    cb = build_pair_codebook(alpha, ["x", "y", "z"])
    model = RuleTableBackend(s, cb)
    E = lambda *labs: cb.encode_string(alpha.ids(labs))  # noqa: E731
    assert model.next_output(E("A", "B")) == E("C")[0]
    ctx = E("B", "C") + E("C")
    assert [model.next_output(ctx), model.next_output(ctx + E("D")[:1])] == E("D")
    assert model.next_output(ctx + E("D")) == E("!h")[0]
    assert model.next_output(ctx + E("D", "!h")) is None
    assert model.next_output(E("C", "A")) is None
    assert model.next_output(E("B", "C") + E("A")) is None  # off-script partial output
    assert model.next_output(["q", "q", "q", "q"]) is None


def test_rule_table_overrides_show_in_describe():
    alpha = Alphabet(["A", "B", "!h"], "!h")
    s = parse_rules("A B -> A", alphabet=alpha)
    cb = build_pair_codebook(alpha, ["x", "y"])
    model = RuleTableBackend(s, cb, overrides={(0, 1): (1,)})
    assert model.describe()["overrides"] == {"0 1": [1]}
    assert cb.parse(model.response(0, 1)) == [1, alpha.halt]
