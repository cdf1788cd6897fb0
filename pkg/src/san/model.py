"""Full image-sentence matching model and its ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, UsageError
from .nn import Params
from .objective import cosine_matrix, cosine_rows
from .saliency import init_saliency_params, saliency_forward
from .sta import fuse_textual, gated_fusion, init_sta_params, textual_attention
from .tensor import Tensor, as_tensor, no_grad, stack
from .text import MAX_LEN, TokenSequence, encode_sentence, init_text_params
from .visual import (
    ENCODER_STRIDE,
    downsample_saliency,
    encode_image,
    fuse_visual,
    global_visual,
    init_visual_params,
    saliency_weights,
    sva,
)

VISUAL_KINDS = ("GV", "SV", "FV")
TEXTUAL_KINDS = ("GT", "ST", "FT(G-S)")
_TEXT_ALIASES = {"FT": "FT(G-S)", "FT(GS)": "FT(G-S)", "FT-GS": "FT(G-S)"}


@dataclass(frozen=True)
class Variant:
    """Which visual and textual embeddings feed the similarity."""

    visual: str = "FV"
    textual: str = "FT(G-S)"

    def __post_init__(self):
        if self.visual not in VISUAL_KINDS:
            raise UsageError(f"unknown visual variant {self.visual!r}; choose from {VISUAL_KINDS}")
        if self.textual not in TEXTUAL_KINDS:
            raise UsageError(f"unknown textual variant {self.textual!r}; choose from {TEXTUAL_KINDS}")

    @classmethod
    def parse(cls, text: str) -> "Variant":
        parts = text.replace(" ", "").upper().split("+")
        if len(parts) != 2:
            raise UsageError(f"variant must look like 'FV+FT(G-S)', got {text!r}")
        vis, txt = parts
        return cls(vis, _TEXT_ALIASES.get(txt, txt))

    def __str__(self) -> str:
        return f"{self.visual}+{self.textual}"

    @property
    def uses_saliency(self) -> bool:
        return self.visual != "GV"

    @property
    def uses_sta(self) -> bool:
        return self.textual != "GT"


FULL = Variant("FV", "FT(G-S)")
BASELINE = Variant("GV", "GT")
ABLATION_GRID = tuple(Variant(v, t) for v in VISUAL_KINDS for t in TEXTUAL_KINDS)


@dataclass
class ModelConfig:
    image_size: int = 32
    backbone_channels: tuple[int, int, int] = (8, 16, 32)
    fusion_width: int = 16
    encoder_channels: tuple[int, int] = (8, 16)
    d: int = 32
    k: int = 64
    emb_dim: int = 32
    max_len: int = MAX_LEN

    def __post_init__(self):
        self.backbone_channels = tuple(self.backbone_channels)
        self.encoder_channels = tuple(self.encoder_channels)
        if self.image_size % ENCODER_STRIDE:
            raise ConfigurationError(f"image_size must be divisible by {ENCODER_STRIDE}")
        for name in ("fusion_width", "d", "k", "emb_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // ENCODER_STRIDE

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        d["encoder_channels"] = list(self.encoder_channels)
        return d


def init_params(cfg: ModelConfig, vocab_size: int, seed: int) -> Params:
    params = Params()
    init_saliency_params(params, seed, cfg.backbone_channels, cfg.fusion_width)
    init_visual_params(params, seed, cfg.d, cfg.k, cfg.encoder_channels)
    init_text_params(params, seed, vocab_size, cfg.emb_dim, cfg.k)
    init_sta_params(params, seed, cfg.k)
    return params


def saliency_param_names(params: Params) -> list[str]:
    return [n for n in params if n.startswith("sal.")]


@dataclass
class ImageEmbedding:
    """Everything computed on the image side of the model for a batch."""

    v_g: Tensor
    v_s: Tensor | None = None
    v: Tensor | None = None
    a_v: Tensor | None = None
    s1: Tensor | None = None

    def select(self, variant: Variant) -> Tensor:
        if variant.visual == "GV":
            return self.v_g
        if variant.visual == "SV":
            return self.v_s
        return self.v


def embed_images(images, params: Params, variant: Variant = FULL) -> ImageEmbedding:
    """Visual embeddings for N x 3 x H x W images (or one 3 x H x W image)."""
    images = as_tensor(images)
    regions = encode_image(images, params)
    v_g = global_visual(regions, params)
    if not variant.uses_saliency:
        return ImageEmbedding(v_g=v_g)
    s1 = saliency_forward(images, params)["S1"]
    grid = images.shape[-1] // ENCODER_STRIDE
    a_v = saliency_weights(downsample_saliency(s1, grid, grid))
    v_s = sva(regions, a_v, params)
    return ImageEmbedding(v_g=v_g, v_s=v_s, v=fuse_visual(v_g, v_s), a_v=a_v, s1=s1)


@dataclass
class SentenceEncoding:
    features: Tensor
    t_g: Tensor


def encode_sentences(sentences: Sequence[TokenSequence], params: Params) -> list[SentenceEncoding]:
    return [SentenceEncoding(*encode_sentence(s, params)) for s in sentences]


def text_for_images(sent: SentenceEncoding, guide: Tensor, params: Params, variant: Variant):
    """Textual embedding of one sentence paired with each of N images.

    Returns (N x k embeddings or a shared k-vector, attention weights or None).
    """
    if not variant.uses_sta:
        return sent.t_g, None
    m_f = gated_fusion(guide, sent.t_g, params)
    a_t, t_s = textual_attention(m_f, sent.features, params)
    if variant.textual == "ST":
        return t_s, a_t
    return fuse_textual(sent.t_g, t_s), a_t


def similarity(
    images: ImageEmbedding,
    sentences: Sequence[SentenceEncoding],
    params: Params,
    variant: Variant = FULL,
) -> Tensor:
    """S[i, j] = cos(image i, sentence j) with the variant's embeddings."""
    vis = images.select(variant)
    if not variant.uses_sta:
        text = stack([s.t_g for s in sentences], axis=0)
        return cosine_matrix(vis, text)
    columns = []
    for sent in sentences:
        t, _ = text_for_images(sent, vis, params, variant)
        columns.append(cosine_rows(vis, t))
    return stack(columns, axis=1)


def similarity_numpy(images, sentences, params, variant=FULL) -> np.ndarray:
    with no_grad():
        emb = embed_images(images, params, variant)
        enc = encode_sentences(sentences, params)
        return similarity(emb, enc, params, variant).data
