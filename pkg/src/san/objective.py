"""Cosine similarity and the bidirectional triplet ranking loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateVectorError, ShapeError, UsageError
from .tensor import Tensor, as_tensor, clip, concat, exact_sum, matmul, relu, reshape, sqrt, tmax, transpose, tsum

NORM_EPS = 1e-12
NEGATIVE_MODES = ("sum-all", "hardest")


@dataclass(frozen=True)
class MarginConfig:
    gamma: float = 0.2
    negative_mode: str = "sum-all"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigurationError(f"margin must be positive, got {self.gamma}")
        if self.negative_mode not in NEGATIVE_MODES:
            raise ConfigurationError(f"unknown negative mode {self.negative_mode!r}")


def cosine(a, b) -> float:
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        raise DegenerateVectorError("cosine of a (near) zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _norms(x: Tensor) -> Tensor:
    n = sqrt(tsum(x * x, axis=-1, keepdims=True))
    if np.any(n.data < NORM_EPS):
        raise DegenerateVectorError("cosine of a (near) zero vector")
    return n


def cosine_matrix(a, b) -> Tensor:
    """S[i, j] = cos(a_i, b_j) for row sets a (N x k) and b (M x k)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_matrix shapes {a.shape} and {b.shape}")
    an, bn = a / _norms(a), b / _norms(b)
    return clip(matmul(an, transpose(bn)), -1.0, 1.0)


def cosine_rows(a, b) -> Tensor:
    """out[i] = cos(a_i, b_i) for two N x k row sets."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_rows shapes {a.shape} and {b.shape}")
    dots = tsum(a * b, axis=-1, keepdims=True)
    return clip(reshape(dots / (_norms(a) * _norms(b)), a.shape[:-1]), -1.0, 1.0)


def triplet_loss(s, cfg: MarginConfig = MarginConfig()) -> Tensor:
    """Bidirectional hinge loss over in-batch negatives.

    ``s[i, j]`` scores image i against sentence j; the diagonal holds the
    matched pairs. Sentence negatives of pair i are row entries s[i, j] and
    image negatives are column entries s[j, i], j != i.
    """
    s = as_tensor(s)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"similarity matrix must be square, got {s.shape}")
    b = s.shape[0]
    if b < 2:
        raise UsageError("triplet loss needs a batch of at least 2 pairs")
    idx = np.arange(b)
    diag = s[idx, idx]
    base = cfg.gamma - diag
    off = 1.0 - np.eye(b)
    # cost_sent[i, j] = max(0, gamma - s[i,i] + s[i,j])
    cost_sent = relu(reshape(base, (b, 1)) + s) * off
    # cost_img[j, i] = max(0, gamma - s[i,i] + s[j,i])
    cost_img = relu(reshape(base, (1, b)) + s) * off
    # correctly rounded totals make the value independent of reduction order
    if cfg.negative_mode == "hardest":
        return exact_sum(concat([tmax(cost_sent, axis=1), tmax(cost_img, axis=0)]))
    return exact_sum(concat([reshape(cost_sent, (-1,)), reshape(cost_img, (-1,))]))
