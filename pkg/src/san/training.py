"""Two-stage training: saliency pre-training with SGD, then whole-model Adam."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import checkpoint
from .datasets import Sample
from .errors import CheckpointError, ConfigurationError, DataError, ShapeError, UsageError
from .model import ModelConfig, Variant, embed_images, encode_sentences, init_params, similarity
from .nn import Params
from .objective import MarginConfig, triplet_loss
from .saliency import saliency_forward, saliency_loss
from .tensor import Tensor, backward
from .text import TokenSequence, Vocabulary, tokenize

log = logging.getLogger(__name__)


@dataclass
class Stage1Config:
    lr: float = 0.1
    batch: int = 16
    iterations: int = 500


@dataclass
class Stage2Config:
    lr: float = 0.001
    batch: int = 8
    epochs: int = 30


@dataclass
class TrainConfig:
    seed: int = 0
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    gamma: float = 0.2
    negative_mode: str = "sum-all"
    variant: str = "FV+FT(G-S)"
    k: int = 64
    emb_dim: int = 32
    d: int = 32
    image_size: int = 32
    backbone_channels: tuple = (8, 16, 32)
    fusion_width: int = 16
    encoder_channels: tuple = (8, 16)
    max_len: int = 16
    split: tuple = (0.8, 0.0, 0.2)

    def __post_init__(self):
        if isinstance(self.stage1, Mapping):
            self.stage1 = _build(Stage1Config, self.stage1, "stage1")
        if isinstance(self.stage2, Mapping):
            self.stage2 = _build(Stage2Config, self.stage2, "stage2")
        self.backbone_channels = tuple(self.backbone_channels)
        self.encoder_channels = tuple(self.encoder_channels)
        self.split = tuple(float(r) for r in self.split)
        if self.stage1.lr < 0 or self.stage2.lr < 0:
            raise ConfigurationError("learning rates must be non-negative")
        if self.stage1.batch < 1 or self.stage1.iterations < 0:
            raise ConfigurationError("stage1 batch must be >= 1 and iterations >= 0")
        if self.stage2.batch < 2:
            raise ConfigurationError("stage2 batch must be at least 2 (the ranking loss needs negatives)")
        if self.stage2.epochs < 0:
            raise ConfigurationError("stage2 epochs must be >= 0")
        MarginConfig(self.gamma, self.negative_mode)
        Variant.parse(self.variant)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        return _build(cls, data, "config")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("backbone_channels", "encoder_channels", "split"):
            d[key] = list(d[key])
        return d

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            image_size=self.image_size,
            backbone_channels=self.backbone_channels,
            fusion_width=self.fusion_width,
            encoder_channels=self.encoder_channels,
            d=self.d,
            k=self.k,
            emb_dim=self.emb_dim,
            max_len=self.max_len,
        )

    @property
    def margin(self) -> MarginConfig:
        return MarginConfig(self.gamma, self.negative_mode)

    @property
    def parsed_variant(self) -> Variant:
        return Variant.parse(self.variant)


def _build(cls, data: Mapping, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown {where} keys: {unknown}")
    return cls(**data)


# ---------------------------------------------------------------------------
# optimisers
# ---------------------------------------------------------------------------
def sgd_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], lr: float) -> None:
    """p <- p - lr * g, in place, for every parameter that has a gradient."""
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        p.data -= lr * g


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, state: Adam, lr: float) -> Adam:
    state.step(params, grads, lr)
    return state


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------
def build_vocab(samples: Sequence[Sample]) -> Vocabulary:
    return Vocabulary.build(c for s in samples for c in s.captions)


def tokenize_captions(samples: Sequence[Sample], vocab: Vocabulary, max_len: int = 16) -> list[list[TokenSequence]]:
    return [[tokenize(c, vocab, max_len) for c in s.captions] for s in samples]


def stack_images(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.image for s in samples])


def stack_masks(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.mask for s in samples])


@dataclass
class TrainResult:
    params: Params
    vocab: Vocabulary
    log: list[dict]

    def save(self, path: str | Path) -> Path:
        return checkpoint.save(path, self.params, self.vocab)


def write_log(rows: Sequence[dict], path: str | Path) -> None:
    if not rows:
        return
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(r.get(k, "")) for k in keys})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------
def train_saliency(
    params: Params,
    images: np.ndarray,
    masks: np.ndarray,
    lr: float,
    batch: int,
    iterations: int,
    seed: int,
) -> list[dict]:
    """SGD on the saliency loss; only ``sal.*`` parameters are touched."""
    n = len(images)
    if n == 0:
        raise UsageError("stage 1 needs at least one (image, mask) pair")
    sal = params.subset("sal.")
    rng = np.random.default_rng([seed, 0x51])
    queue: list[int] = []
    rows = []
    for it in range(iterations):
        idx = []
        while len(idx) < min(batch, n):
            if not queue:
                queue = [int(i) for i in rng.permutation(n)]
            idx.append(queue.pop(0))
        s1 = saliency_forward(images[idx], sal)["S1"]
        loss = saliency_loss(s1, masks[idx])
        grads = backward(loss, sal)
        sgd_step(sal, grads, lr)
        rows.append({"stage": 1, "step": it, "loss": loss.item()})
    return rows


def train_stage1(
    config: TrainConfig,
    samples: Sequence[Sample],
    vocab: Vocabulary | None = None,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Initialise the whole model and pre-train its saliency network.

    Every parameter outside ``sal.`` keeps its initial value.
    """
    if not samples:
        raise UsageError("stage 1 needs a non-empty dataset")
    for s in samples:
        if s.mask is None or s.mask.shape != s.image.shape[1:]:
            raise DataError(f"sample {s.id} has no usable saliency mask")
    vocab = vocab or build_vocab(samples)
    params = init_params(config.model_config(), len(vocab), config.seed)
    rows = train_saliency(
        params,
        stack_images(samples),
        stack_masks(samples),
        config.stage1.lr,
        config.stage1.batch,
        config.stage1.iterations,
        config.seed,
    )
    result = TrainResult(params, vocab, rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.save(out / "stage1.ckpt")
        write_log(rows, out / "stage1_log.csv")
    return result


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------
def epoch_batches(n: int, batch: int, seed: int, epoch: int) -> list[list[int]]:
    """Seeded shuffle sliced into batches; a trailing batch under 2 is dropped."""
    perm = [int(i) for i in np.random.default_rng([seed, 0x52, epoch]).permutation(n)]
    out = [perm[i:i + batch] for i in range(0, n, batch)]
    return [b for b in out if len(b) >= 2]


def ranking_loss(
    params: Params,
    images: np.ndarray,
    sentences: Sequence[TokenSequence],
    variant: Variant,
    margin: MarginConfig,
) -> Tensor:
    emb = embed_images(images, params, variant)
    enc = encode_sentences(sentences, params)
    return triplet_loss(similarity(emb, enc, params, variant), margin)


def train_stage2(
    config: TrainConfig,
    samples: Sequence[Sample],
    stage1: TrainResult | str | Path,
    val_samples: Sequence[Sample] = (),
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Fine-tune every parameter with Adam on the bidirectional ranking loss."""
    from .evaluation import evaluate  # evaluation imports training helpers

    if isinstance(stage1, TrainResult):
        arrays, vocab = stage1.params.numpy(), stage1.vocab
    else:
        arrays, vocab = checkpoint.load(stage1)
    params = init_params(config.model_config(), len(vocab), config.seed)
    try:
        checkpoint.restore(params, arrays)
    except CheckpointError as exc:
        raise CheckpointError(f"stage-1 checkpoint incompatible with config: {exc}") from exc
    if len(samples) < 2:
        raise UsageError("stage 2 needs at least two samples")
    variant = config.parsed_variant
    margin = config.margin
    images = stack_images(samples)
    captions = tokenize_captions(samples, vocab, config.max_len)
    adam = Adam()
    rows = []
    for epoch in range(config.stage2.epochs):
        total = 0.0
        cap_rng = np.random.default_rng([config.seed, 0x53, epoch])
        for idx in epoch_batches(len(samples), config.stage2.batch, config.seed, epoch):
            sents = [captions[i][int(cap_rng.integers(len(captions[i])))] for i in idx]
            loss = ranking_loss(params, images[idx], sents, variant, margin)
            grads = backward(loss, params)
            adam.step(params, grads, config.stage2.lr)
            total += loss.item()
        row = {"stage": 2, "epoch": epoch, "loss": total}
        if val_samples:
            rep = evaluate(params, val_samples, vocab, variant, max_len=config.max_len)
            row["val_sR@1"], row["val_iR@1"] = rep.s_r1, rep.i_r1
        log.info("stage2 epoch %d loss %.6f", epoch, total)
        rows.append(row)
    result = TrainResult(params, vocab, rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.save(out / "stage2.ckpt")
        write_log(rows, out / "stage2_log.csv")
    return result
