"""Finite-difference gradient checks over every module on tiny random instances.

Each check builds a scalar function of freshly jittered parameters (and,
where relevant, inputs), then compares reverse-mode gradients against
central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import UsageError
from .model import FULL, ModelConfig, embed_images, encode_sentences, init_params, similarity
from .nn import Params
from .objective import MarginConfig, cosine_matrix, cosine_rows, triplet_loss
from .saliency import saliency_forward, saliency_loss
from .sta import fuse_textual, gated_fusion, textual_attention
from .tensor import (
    Tensor,
    avg_pool2d,
    concat,
    conv2d,
    gradcheck,
    matmul,
    mean_axis,
    prelu,
    sigmoid,
    softmax,
    tanh,
    tmax,
    tsum,
    upsample_nearest,
)
from .text import TokenSequence, encode_sentence
from .visual import downsample_saliency, encode_image, fuse_visual, global_visual, saliency_weights, sva

TOLERANCE = 1e-4
STEP = 1e-5

TINY = ModelConfig(
    image_size=16,
    backbone_channels=(2, 3, 4),
    fusion_width=3,
    encoder_channels=(2, 3),
    d=4,
    k=4,
    emb_dim=3,
    max_len=8,
)
TINY_VOCAB = 7


@dataclass
class ModuleResult:
    module: str
    worst: float
    per_param: dict

    @property
    def passed(self) -> bool:
        return self.worst <= TOLERANCE


def _tiny_params(seed: int) -> Params:
    params = init_params(TINY, TINY_VOCAB, seed)
    # move off the zero-bias / constant-slope initial point
    rng = np.random.default_rng([seed, 0x6C])
    for p in params.values():
        p.data += rng.normal(scale=0.1, size=p.shape)
    return params


def _tokens(rng, length: int) -> TokenSequence:
    ids = tuple(int(i) for i in rng.integers(2, TINY_VOCAB, size=length))
    return TokenSequence(ids, tuple(f"w{i}" for i in ids))


def _probe(rng, shape) -> np.ndarray:
    return rng.normal(size=shape)


def _check_tensor(seed: int):
    rng = np.random.default_rng([seed, 1])
    point = {
        "x": Tensor(rng.normal(size=(1, 2, 6, 6))),
        "w": Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5),
        "b": Tensor(rng.normal(size=3) * 0.1),
        "slope": Tensor(rng.uniform(0.1, 0.4, size=3)),
        "m": Tensor(rng.normal(size=(9, 4)) * 0.3),
    }
    probe = _probe(rng, (1, 3, 4))

    def f():
        h = prelu(conv2d(point["x"], point["w"], point["b"], padding=1), point["slope"], axis=1)
        p = avg_pool2d(h, 2, 2)
        z = tanh(matmul(p.reshape(3, 9), point["m"]))
        att = softmax(z, axis=1)
        mix = concat([att.reshape(1, 3, 4), Tensor(probe)], axis=0)
        return tsum(mix * mix) + mean_axis(sigmoid(upsample_nearest(p, 2))) + tsum(tmax(z, axis=1))

    return f, point


def _check_saliency(seed: int):
    rng = np.random.default_rng([seed, 2])
    params = _tiny_params(seed).subset("sal.")
    image = Tensor(rng.uniform(size=(2, 3, TINY.image_size, TINY.image_size)))
    mask = (rng.uniform(size=(2, TINY.image_size, TINY.image_size)) > 0.7).astype(np.float64)
    probe = _probe(rng, (2, TINY.image_size // 2, TINY.image_size // 2))

    def f():
        out = saliency_forward(image, params)
        return saliency_loss(out["S1"], mask) + tsum(out["S0"] * probe)

    return f, {**params, "image": image}


def _check_visual(seed: int):
    rng = np.random.default_rng([seed, 3])
    params = _tiny_params(seed).subset(("enc.", "vis."))
    image = Tensor(rng.uniform(size=(2, 3, TINY.image_size, TINY.image_size)))
    s1 = Tensor(rng.normal(size=(2, TINY.image_size, TINY.image_size)))
    probe = _probe(rng, (2, TINY.k))

    def f():
        regions = encode_image(image, params)
        v_g = global_visual(regions, params)
        a_v = saliency_weights(downsample_saliency(s1, TINY.grid, TINY.grid))
        v = fuse_visual(v_g, sva(regions, a_v, params))
        return tsum(v * probe)

    return f, {**params, "image": image, "s1": s1}


def _check_text(seed: int):
    rng = np.random.default_rng([seed, 4])
    params = _tiny_params(seed).subset("txt.")
    tokens = _tokens(rng, 5)
    p_feat, p_glob = _probe(rng, (5, TINY.k)), _probe(rng, TINY.k)

    def f():
        feats, t_g = encode_sentence(tokens, params)
        return tsum(feats * p_feat) + tsum(t_g * p_glob)

    return f, params


def _check_sta(seed: int):
    rng = np.random.default_rng([seed, 5])
    params = _tiny_params(seed).subset("sta.")
    guide = Tensor(rng.normal(size=(3, TINY.k)))
    feats = Tensor(rng.normal(size=(4, TINY.k)))
    t_g = Tensor(rng.normal(size=TINY.k))
    probe = _probe(rng, (3, TINY.k))

    def f():
        m_f = gated_fusion(guide, t_g, params)
        _, t_s = textual_attention(m_f, feats, params)
        return tsum(fuse_textual(t_g, t_s) * probe)

    return f, {**params, "guide": guide, "features": feats, "t_g": t_g}


def _hinge_margins(s: np.ndarray, gamma: float) -> np.ndarray:
    diag = np.diag(s)
    return np.concatenate([(gamma - diag[:, None] + s).ravel(), (gamma - diag[None, :] + s).ravel()])


def _check_objective(seed: int):
    rng = np.random.default_rng([seed, 6])
    cfg = MarginConfig(0.2, "sum-all")
    hard = MarginConfig(0.2, "hardest")
    while True:
        a = Tensor(rng.normal(size=(4, 5)))
        b = Tensor(rng.normal(size=(4, 5)))
        s = cosine_matrix(a.data, b.data).data
        # stay clear of hinge kinks and max ties so finite differences are valid
        off = s[~np.eye(4, dtype=bool)].reshape(4, 3)
        gaps = np.abs(np.diff(np.sort(off, axis=1), axis=1))
        if np.all(np.abs(_hinge_margins(s, 0.2)) > 1e-3) and np.all(gaps > 1e-3):
            break
    c = Tensor(rng.normal(size=(4, 5)))

    def f():
        sim = cosine_matrix(a, b)
        return triplet_loss(sim, cfg) + triplet_loss(sim, hard) + tsum(cosine_rows(a, c))

    return f, {"a": a, "b": b, "c": c}


def _check_end_to_end(seed: int):
    """Ranking loss of the full model on a 2-pair batch, all parameters."""
    rng = np.random.default_rng([seed, 7])
    params = _tiny_params(seed)
    images = rng.uniform(size=(2, 3, TINY.image_size, TINY.image_size))
    sentences = [_tokens(rng, 4), _tokens(rng, 3)]
    cfg = MarginConfig(0.2, "sum-all")

    def f():
        sim = similarity(embed_images(images, params, FULL), encode_sentences(sentences, params), params, FULL)
        return triplet_loss(sim, cfg)

    return f, params


CHECKS: dict[str, Callable] = {
    "tensor": _check_tensor,
    "saliency_net": _check_saliency,
    "visual_path": _check_visual,
    "text_path": _check_text,
    "sta": _check_sta,
    "objective": _check_objective,
    "end_to_end": _check_end_to_end,
}


def run_module(module: str, seed: int = 0, step: float = STEP) -> ModuleResult:
    if module not in CHECKS:
        raise UsageError(f"unknown gradcheck module {module!r}; choose from {sorted(CHECKS)}")
    f, point = CHECKS[module](seed)
    per: dict = {}
    worst = gradcheck(f, point, step, report=per)
    return ModuleResult(module, worst, per)


def run_suite(modules=None, seed: int = 0, step: float = STEP) -> list[ModuleResult]:
    return [run_module(m, seed, step) for m in (modules or list(CHECKS))]
