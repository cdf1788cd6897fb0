import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from san.errors import DataError, ShapeError
from san.nn import Params
from san.tensor import Tensor, backward, gradcheck, tsum
from san.text import (
    UNK,
    TokenSequence,
    Vocabulary,
    bigru,
    embed,
    encode_sentence,
    global_textual,
    init_text_params,
    split_words,
    tokenize,
)

GATES = ("z", "r", "h")


def _params(seed=0, vocab=6, emb=3, k=4, jitter=0.3):
    params = init_text_params(Params(), seed, vocab, emb, k)
    rng = np.random.default_rng([seed, 99])
    for p in params.values():
        p.data += rng.normal(scale=jitter, size=p.shape)
    return params


# -- scalar-loop oracle -------------------------------------------------------
def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def gru_oracle(xs, p, side, reverse):
    k = p[f"txt.gru.{side}.U_z"].shape[0]
    W = {g: p[f"txt.gru.{side}.W_{g}"].data for g in GATES}
    U = {g: p[f"txt.gru.{side}.U_{g}"].data for g in GATES}
    B = {g: p[f"txt.gru.{side}.b_{g}"].data for g in GATES}
    h = [0.0] * k
    out = [None] * len(xs)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    for t in order:
        x = xs[t]

        def pre(g, vec):
            return [sum(W[g][i][c] * x[c] for c in range(len(x))) + sum(U[g][i][m] * vec[m] for m in range(k)) + B[g][i]
                    for i in range(k)]

        z = [_sig(a) for a in pre("z", h)]
        r = [_sig(a) for a in pre("r", h)]
        c = [math.tanh(a) for a in pre("h", [r[m] * h[m] for m in range(k)])]
        h = [(1 - z[i]) * h[i] + z[i] * c[i] for i in range(k)]
        out[t] = h
    return np.array(out)


# -- vocabulary / tokenizer ---------------------------------------------------
def test_tokenize_direct_lookup():
    vocab = Vocabulary({"a": 2, "red": 3, "circle": 4})
    assert tokenize("A red circle.", vocab).ids == (2, 3, 4)


def test_out_of_vocabulary_maps_to_unk():
    vocab = Vocabulary({"a": 2})
    assert tokenize("a purple", vocab).ids == (2, UNK)


def test_tokenize_round_trip():
    vocab = Vocabulary.build(["the red square is left of the blue circle"])
    seq = tokenize("The red square is LEFT of the blue circle!", vocab)
    assert tokenize(seq.text(), vocab) == seq


def test_tokenize_truncates_and_rejects_empty():
    vocab = Vocabulary.build(["a b c d"])
    assert len(tokenize("a b c d", vocab, max_len=2)) == 2
    with pytest.raises(DataError):
        tokenize("?!", vocab)


def test_vocabulary_build_and_lines():
    vocab = Vocabulary.build(["b a", "c a"])
    assert vocab.lookup("a") == 2 and vocab.lookup("b") == 3 and vocab.lookup("c") == 4
    assert Vocabulary.from_lines(vocab.to_lines()).to_lines() == vocab.to_lines()


def test_split_words():
    assert split_words("Red-circle, 2 squares") == ["red", "circle", "2", "squares"]


# -- embedding ----------------------------------------------------------------
def test_embed_identity_rows():
    w = Tensor(np.eye(5))
    e = embed([3, 1, 3], w).data
    assert np.array_equal(e, np.eye(5)[[3, 1, 3]])


def test_embed_gradient_is_lookup_indicator():
    w = Tensor(np.random.default_rng(0).normal(size=(3, 6)), requires_grad=True)
    g = backward(tsum(embed([4, 2], w)), {"w": w})["w"]
    expected = np.zeros((3, 6))
    expected[:, [2, 4]] = 1.0
    assert np.array_equal(g, expected)


def test_embed_rejects_out_of_range_id():
    with pytest.raises(DataError):
        embed([7], Tensor(np.zeros((2, 5))))


# -- recurrent encoder --------------------------------------------------------
def test_zero_weights_give_zero_states():
    params = init_text_params(Params(), 0, 5, 3, 4)
    for name, p in params.items():
        if name.startswith("txt.gru"):
            p.data[...] = 0.0
    out = bigru(np.random.default_rng(0).normal(size=(3, 3)), params)
    assert not np.any(out.data)


def test_single_token_is_mean_of_both_directions():
    params = _params(1)
    x = np.random.default_rng(1).normal(size=(1, 3))
    out = bigru(x, params).data[0]
    expected = (gru_oracle(x, params, "f", False)[0] + gru_oracle(x, params, "b", True)[0]) / 2
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_bigru_matches_scalar_loop(seed):
    params = _params(seed)
    x = np.random.default_rng(seed).normal(size=(3, 3))
    expected = (gru_oracle(x, params, "f", False) + gru_oracle(x, params, "b", True)) / 2
    np.testing.assert_allclose(bigru(x, params).data, expected, rtol=0, atol=1e-13)


def test_reversal_duality():
    params = _params(2)
    swapped = Params(params)
    for name in list(params):
        if ".gru.f." in name:
            swapped[name.replace(".f.", ".b.")] = params[name]
        elif ".gru.b." in name:
            swapped[name.replace(".b.", ".f.")] = params[name]
    x = np.random.default_rng(2).normal(size=(5, 3))
    assert np.array_equal(bigru(x[::-1].copy(), swapped).data, bigru(x, params).data[::-1])


def test_bigru_rejects_empty_sequence():
    with pytest.raises(ShapeError):
        bigru(np.zeros((0, 3)), _params())


def test_global_textual_examples():
    t = np.random.default_rng(0).normal(size=(1, 4))
    assert np.array_equal(global_textual(t).data, t[0])
    assert np.array_equal(global_textual([[2.0, 0.0], [0.0, 2.0]]).data, [1.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 8))
def test_global_textual_is_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    # dyadic values keep the sum exact in any order
    t = rng.integers(-64, 64, size=(n, 3)) / 8.0
    perm = rng.permutation(n)
    assert np.array_equal(global_textual(t).data, global_textual(t[perm]).data)


@pytest.mark.parametrize("length", [1, 3, 6])
def test_text_path_gradcheck(length):
    params = _params(length, vocab=6)
    rng = np.random.default_rng(length)
    seq = TokenSequence(tuple(int(i) for i in rng.integers(0, 6, size=length)), ("w",) * length)
    probe = rng.normal(size=(length, 4))

    def f():
        feats, t_g = encode_sentence(seq, params)
        return tsum(feats * probe) + tsum(t_g)

    assert gradcheck(f, params) <= 1e-4
