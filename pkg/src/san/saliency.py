"""Lightweight residual-refinement saliency network.

A three-stage conv + pooling backbone feeds a low-level branch (stages 1 and 2)
and a high-level branch (stage 3). The high branch predicts a coarse map S0;
a refinement block predicts a residue from S0 and the low-level features and
adds it back, giving S1. All maps are kept as logits.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError
from .nn import Params, add_conv, conv_layer, down_stage
from .tensor import Tensor, as_tensor, concat, mean_axis, mul, reshape, softplus, upsample_nearest

PREFIX = "sal."


def init_saliency_params(
    params: Params,
    seed: int,
    channels: tuple[int, int, int] = (8, 16, 32),
    fusion_width: int = 16,
) -> Params:
    c_in = 3
    for i, c in enumerate(channels):
        add_conv(params, f"sal.backbone.{i}", c_in, c, seed)
        c_in = c
    add_conv(params, "sal.fuse_low", channels[0] + channels[1], fusion_width, seed)
    add_conv(params, "sal.fuse_high", channels[2], fusion_width, seed)
    add_conv(params, "sal.s0", fusion_width, 1, seed, act=False)
    add_conv(params, "sal.phi.0", fusion_width + 1, fusion_width, seed)
    add_conv(params, "sal.phi.1", fusion_width, 1, seed, act=False)
    return params


def backbone_forward(image, params: Params) -> tuple[Tensor, Tensor, Tensor]:
    """Return feature maps at 1/2, 1/4 and 1/8 of the input resolution."""
    image = as_tensor(image)
    h, w = image.shape[-2:]
    if h % 8 or w % 8:
        raise ConfigurationError(f"image size {h}x{w} must be divisible by 8")
    f1 = down_stage(image, params, "sal.backbone.0")
    f2 = down_stage(f1, params, "sal.backbone.1")
    f3 = down_stage(f2, params, "sal.backbone.2")
    return f1, f2, f3


def fuse_low(f1: Tensor, f2: Tensor, params: Params) -> Tensor:
    if f2.shape[-2] * 2 != f1.shape[-2] or f2.shape[-1] * 2 != f1.shape[-1]:
        raise ShapeError(f"fuse_low expects f2 at half of f1's size, got {f1.shape} and {f2.shape}")
    up = upsample_nearest(f2, 2)
    return conv_layer(concat([f1, up], axis=-3), params, "sal.fuse_low")


def fuse_high(f3: Tensor, params: Params, out_size: tuple[int, int] | None = None) -> Tensor:
    """Integrate the high-level features, optionally upsampled to ``out_size``."""
    out = conv_layer(f3, params, "sal.fuse_high")
    if out_size is not None:
        fh, fw = out_size[0] // f3.shape[-2], out_size[1] // f3.shape[-1]
        if fh * f3.shape[-2] != out_size[0] or fw * f3.shape[-1] != out_size[1]:
            raise ShapeError(f"cannot upsample {f3.shape[-2:]} to {out_size} by an integer factor")
        out = upsample_nearest(out, fh, fw)
    return out


def rrb(f_low: Tensor, f_high: Tensor, params: Params, out_size: tuple[int, int] | None = None):
    """Residual refinement: returns (S0, S1) as single-channel logit maps.

    S0 stays at the feature resolution; S1 = residue + S0 is upsampled to
    ``out_size`` when given. Channel axes are dropped from both maps.
    """
    if f_low.shape[-2:] != f_high.shape[-2:]:
        raise ShapeError(f"rrb inputs are not aligned: {f_low.shape} vs {f_high.shape}")
    s0 = conv_layer(f_high, params, "sal.s0")
    hidden = conv_layer(concat([s0, f_low], axis=-3), params, "sal.phi.0")
    residue = conv_layer(hidden, params, "sal.phi.1")
    s1 = residue + s0
    if out_size is not None:
        fh, fw = out_size[0] // s1.shape[-2], out_size[1] // s1.shape[-1]
        s1 = upsample_nearest(s1, fh, fw)
    return _drop_channel(s0), _drop_channel(s1)


def _drop_channel(x: Tensor) -> Tensor:
    return reshape(x, x.shape[:-3] + x.shape[-2:])


def saliency_forward(image, params: Params) -> dict[str, Tensor]:
    """Full pass from image(s) to the refined saliency logits S1 at input size."""
    image = as_tensor(image)
    size = image.shape[-2:]
    f1, f2, f3 = backbone_forward(image, params)
    f_low = fuse_low(f1, f2, params)
    f_high = fuse_high(f3, params, f_low.shape[-2:])
    s0, s1 = rrb(f_low, f_high, params, size)
    return {"f1": f1, "f2": f2, "f3": f3, "F_low": f_low, "F_high": f_high, "S0": s0, "S1": s1}


def saliency_loss(s1, mask) -> Tensor:
    """Mean per-pixel binary cross-entropy between sigmoid(S1) and a 0/1 mask."""
    s1 = as_tensor(s1)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if mask.shape != s1.shape:
        raise ShapeError(f"saliency map {s1.shape} and mask {mask.shape} differ")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise DataError("saliency mask must contain only 0 and 1")
    # -[y log s(x) + (1-y) log(1-s(x))] = softplus(x) - x*y
    return mean_axis(softplus(s1) - mul(s1, mask))


def binary_f1(s1: np.ndarray, mask: np.ndarray, threshold: float = 0.0) -> float:
    """Pixel-level F1 of ``S1 > threshold`` (logit 0 is probability 0.5)."""
    pred = np.asarray(s1) > threshold
    truth = np.asarray(mask) > 0.5
    tp = float(np.sum(pred & truth))
    fp = float(np.sum(pred & ~truth))
    fn = float(np.sum(~pred & truth))
    if tp == 0.0:
        return 1.0 if fp == 0.0 and fn == 0.0 else 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)
