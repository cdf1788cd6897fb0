"""Saliency-guided textual attention.

A gated fusion of the visual embedding and the global sentence feature yields
a context vector m_f in (0, 1)^k, which scores every word feature; the softmax
of those scores weights the words into the attended sentence vector t^(s).
"""

from __future__ import annotations

from .errors import ShapeError
from .nn import Params, add_linear, linear
from .tensor import Tensor, as_tensor, matmul, reshape, sigmoid, softmax, tanh


def init_sta_params(params: Params, seed: int, k: int = 64) -> Params:
    add_linear(params, "sta.U_v", k, k, seed)
    add_linear(params, "sta.U_t", k, k, seed)
    add_linear(params, "sta.W_t0", k, k, seed)
    add_linear(params, "sta.W_t1", k, k, seed)
    add_linear(params, "sta.W_t2", k, 1, seed)
    return params


def gated_fusion(v, t_g, params: Params) -> Tensor:
    """m_f = sigmoid(U_v v + U_t t_g); ``v`` may carry a leading batch axis."""
    v, t_g = as_tensor(v), as_tensor(t_g)
    if v.shape[-1] != t_g.shape[-1]:
        raise ShapeError(f"gated fusion dims differ: {v.shape} vs {t_g.shape}")
    return sigmoid(linear(v, params, "sta.U_v") + linear(t_g, params, "sta.U_t"))


def textual_attention(m_f, features, params: Params) -> tuple[Tensor, Tensor]:
    """Attention weights over the L words and the attended vector t^(s).

    With ``m_f`` of shape N x k (one context per image) the outputs are
    N x L weights and N x k vectors; a single k-vector gives L and k.
    """
    m_f, feats = as_tensor(m_f), as_tensor(features)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ShapeError(f"word features must be L x k with L >= 1, got {feats.shape}")
    single = m_f.ndim == 1
    ctx = reshape(m_f, (1, -1)) if single else m_f
    n, length = ctx.shape[0], feats.shape[0]
    # tanh(W_t0 m_f) is shared by every word of the sentence
    g = tanh(linear(ctx, params, "sta.W_t0"))
    u = tanh(linear(feats, params, "sta.W_t1"))
    h = reshape(g, (n, 1, -1)) * reshape(u, (1, length, -1))
    scores = reshape(linear(h, params, "sta.W_t2"), (n, length))
    a_t = softmax(scores, axis=-1)
    t_s = matmul(a_t, feats)
    if single:
        return reshape(a_t, (length,)), reshape(t_s, (feats.shape[1],))
    return a_t, t_s


def fuse_textual(t_g, t_s) -> Tensor:
    t_g, t_s = as_tensor(t_g), as_tensor(t_s)
    if t_g.shape[-1] != t_s.shape[-1]:
        raise ShapeError(f"cannot fuse textual vectors of shapes {t_g.shape} and {t_s.shape}")
    return (t_g + t_s) * 0.5
