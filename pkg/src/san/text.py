"""Sentence encoder: tokenisation, word embedding and a bidirectional GRU."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, ShapeError
from .nn import Params
from .tensor import Function, Tensor, as_tensor, getitem, mean_axis, transpose

PAD, UNK = 0, 1
MAX_LEN = 16
_TOKEN_RE = re.compile(r"[a-z0-9]+")


class Vocabulary:
    """Token to id map with PAD=0 and UNK=1 reserved."""

    def __init__(self, mapping: Mapping[str, int] | None = None):
        self.token_to_id: dict[str, int] = {"<pad>": PAD, "<unk>": UNK}
        if mapping:
            for tok, idx in mapping.items():
                if idx in (PAD, UNK) and tok not in ("<pad>", "<unk>"):
                    raise DataError(f"token {tok!r} uses reserved id {idx}")
                self.token_to_id[tok] = int(idx)
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise DataError("vocabulary ids must be dense and unique")
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    @classmethod
    def build(cls, sentences: Iterable[str], min_count: int = 1) -> "Vocabulary":
        counts = Counter(tok for s in sentences for tok in split_words(s))
        kept = sorted(t for t, c in counts.items() if c >= min_count)
        return cls({t: i + 2 for i, t in enumerate(kept)})

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def to_lines(self) -> list[str]:
        return [f"{self.id_to_token[i]}\t{i}" for i in range(len(self))]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocabulary":
        mapping = {}
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                tok, idx = line.rstrip("\n").split("\t")
                mapping[tok] = int(idx)
            except ValueError as exc:
                raise DataError(f"malformed vocabulary line {n}: {line!r}") from exc
        return cls(mapping)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def text(self) -> str:
        return " ".join(self.tokens)


def split_words(sentence: str) -> list[str]:
    return _TOKEN_RE.findall(sentence.lower())


def tokenize(sentence: str, vocab: Vocabulary, max_len: int = MAX_LEN) -> TokenSequence:
    tokens = split_words(sentence)[:max_len]
    if not tokens:
        raise DataError(f"sentence has no tokens: {sentence!r}")
    return TokenSequence(tuple(vocab.lookup(t) for t in tokens), tuple(tokens))


def init_text_params(params: Params, seed: int, vocab_size: int, emb_dim: int = 32, k: int = 64) -> Params:
    params.add_weight("txt.W_e", (emb_dim, vocab_size), seed)
    for side in ("f", "b"):
        for gate in ("z", "r", "h"):
            params.add_weight(f"txt.gru.{side}.W_{gate}", (k, emb_dim), seed)
            params.add_weight(f"txt.gru.{side}.U_{gate}", (k, k), seed)
            params.add_zeros(f"txt.gru.{side}.b_{gate}", (k,))
    return params


def embed(tokens: TokenSequence | Sequence[int], w_e: Tensor) -> Tensor:
    """Column lookup in W_e; returns L x emb_dim."""
    ids = list(tokens.ids if isinstance(tokens, TokenSequence) else tokens)
    vocab_size = w_e.shape[1]
    bad = [i for i in ids if not 0 <= i < vocab_size]
    if bad:
        raise DataError(f"token ids {bad} out of range for vocabulary of size {vocab_size}")
    cols = getitem(w_e, (slice(None), np.asarray(ids, dtype=np.int64)))
    return transpose(cols)


def _sig(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class GruSequence(Function):
    """One GRU direction over a whole sequence, with hand-written BPTT.

    Inputs: x (L x emb), then W_z, W_r, W_h (k x emb), U_z, U_r, U_h (k x k)
    and b_z, b_r, b_h (k). Returns the L x k hidden states in position order;
    ``reverse`` runs the recurrence from the last position to the first.

        z = s(W_z x + U_z h + b_z)
        r = s(W_r x + U_r h + b_r)
        c = tanh(W_h x + U_h (r * h) + b_h)
        h' = (1 - z) * h + z * c
    """

    def forward(self, x, w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h, reverse=False):
        length, k = x.shape[0], u_z.shape[0]
        xz, xr, xh = x @ w_z.T + b_z, x @ w_r.T + b_r, x @ w_h.T + b_h
        order = range(length - 1, -1, -1) if reverse else range(length)
        hs = np.zeros((length, k))
        prev = np.zeros((length, k))
        zs, rs, cs = np.zeros((length, k)), np.zeros((length, k)), np.zeros((length, k))
        h = np.zeros(k)
        for j in order:
            z = _sig(xz[j] + u_z @ h)
            r = _sig(xr[j] + u_r @ h)
            c = np.tanh(xh[j] + u_h @ (r * h))
            prev[j], zs[j], rs[j], cs[j] = h, z, r, c
            h = (1.0 - z) * h + z * c
            hs[j] = h
        self.saved = (x, w_z, w_r, w_h, u_z, u_r, u_h, prev, zs, rs, cs, reverse)
        return hs

    def backward(self, grad):
        x, w_z, w_r, w_h, u_z, u_r, u_h, prev, zs, rs, cs, reverse = self.saved
        length, k = grad.shape
        order = range(length) if reverse else range(length - 1, -1, -1)
        da_z, da_r, da_h = np.zeros((length, k)), np.zeros((length, k)), np.zeros((length, k))
        gu_z, gu_r, gu_h = np.zeros_like(u_z), np.zeros_like(u_r), np.zeros_like(u_h)
        carry = np.zeros(k)
        for j in order:
            dh = grad[j] + carry
            h, z, r, c = prev[j], zs[j], rs[j], cs[j]
            dz = dh * (c - h)
            dc = dh * z
            carry = dh * (1.0 - z)
            ah = dc * (1.0 - c * c)
            rh = r * h
            gu_h += np.outer(ah, rh)
            drh = u_h.T @ ah
            carry = carry + drh * r
            dr = drh * h
            az = dz * z * (1.0 - z)
            ar = dr * r * (1.0 - r)
            gu_z += np.outer(az, h)
            gu_r += np.outer(ar, h)
            carry = carry + u_z.T @ az + u_r.T @ ar
            da_z[j], da_r[j], da_h[j] = az, ar, ah
        gx = da_z @ w_z + da_r @ w_r + da_h @ w_h
        return (
            gx,
            da_z.T @ x, da_r.T @ x, da_h.T @ x,
            gu_z, gu_r, gu_h,
            da_z.sum(axis=0), da_r.sum(axis=0), da_h.sum(axis=0),
        )


def gru_direction(embeddings, params: Params, side: str, reverse: bool = False) -> Tensor:
    p = f"txt.gru.{side}."
    names = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")
    return GruSequence.apply(embeddings, *(params[p + n] for n in names), reverse=reverse)


def bigru(embeddings, params: Params) -> Tensor:
    """Per-position mean of forward and backward GRU states, L x k."""
    e = as_tensor(embeddings)
    if e.ndim != 2 or e.shape[0] < 1:
        raise ShapeError(f"bigru expects an L x emb matrix with L >= 1, got {e.shape}")
    h_f = gru_direction(e, params, "f")
    h_b = gru_direction(e, params, "b", reverse=True)
    return (h_f + h_b) * 0.5


def global_textual(features) -> Tensor:
    features = as_tensor(features)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ShapeError(f"global_textual expects L x k with L >= 1, got {features.shape}")
    return mean_axis(features, axis=0)


def encode_sentence(tokens: TokenSequence | Sequence[int], params: Params) -> tuple[Tensor, Tensor]:
    """Word features t_1..t_L and their mean t^(g)."""
    feats = bigru(embed(tokens, params["txt.W_e"]), params)
    return feats, global_textual(feats)
