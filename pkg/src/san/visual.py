"""Region features, global and saliency-weighted visual embeddings."""

from __future__ import annotations

from .errors import ConfigurationError, ShapeError
from .nn import Params, add_conv, add_linear, down_stage, linear
from .tensor import Tensor, as_tensor, avg_pool2d, mean_axis, reshape, sigmoid, tsum, transpose

ENCODER_STRIDE = 8


def init_visual_params(
    params: Params,
    seed: int,
    d: int = 32,
    k: int = 64,
    channels: tuple[int, int] = (8, 16),
) -> Params:
    c_in = 3
    for i, c in enumerate((*channels, d)):
        add_conv(params, f"enc.{i}", c_in, c, seed)
        c_in = c
    add_linear(params, "vis.P_g", d, k, seed)
    add_linear(params, "vis.P_s", d, k, seed)
    return params


def encode_image(image, params: Params) -> Tensor:
    """Map image(s) [N x] 3 x H x W to region features [N x] M x d, M = (H/8)(W/8).

    Regions are flattened row-major over the X x Y grid.
    """
    image = as_tensor(image)
    h, w = image.shape[-2:]
    if h % ENCODER_STRIDE or w % ENCODER_STRIDE:
        raise ConfigurationError(f"image size {h}x{w} must be divisible by {ENCODER_STRIDE}")
    x = image
    for i in range(3):
        x = down_stage(x, params, f"enc.{i}")
    d, gx, gy = x.shape[-3:]
    flat = reshape(x, x.shape[:-3] + (d, gx * gy))
    axes = tuple(range(flat.ndim - 2)) + (flat.ndim - 1, flat.ndim - 2)
    return transpose(flat, axes)


def global_visual(v: Tensor, params: Params) -> Tensor:
    """Mean of the region features followed by the P_g projection."""
    return linear(mean_axis(v, axis=-2), params, "vis.P_g")


def downsample_saliency(s1, x: int, y: int) -> Tensor:
    s1 = as_tensor(s1)
    h, w = s1.shape[-2:]
    if x < 1 or y < 1 or h % x or w % y:
        raise ConfigurationError(f"saliency map {h}x{w} cannot be pooled to {x}x{y}")
    return avg_pool2d(s1, h // x, w // y)


def saliency_weights(s2) -> Tensor:
    """sigmoid then L1 normalisation, flattened row-major to length M."""
    s2 = as_tensor(s2)
    if s2.ndim >= 2:
        s2 = reshape(s2, s2.shape[:-2] + (s2.shape[-2] * s2.shape[-1],))
    g = sigmoid(s2)
    return g / tsum(g, axis=-1, keepdims=True)


def sva(v: Tensor, a_v, params: Params) -> Tensor:
    """Saliency-weighted sum of region features, projected by P_s."""
    a_v = as_tensor(a_v)
    if a_v.shape[-1] != v.shape[-2]:
        raise ShapeError(f"{a_v.shape[-1]} weights for {v.shape[-2]} regions")
    weights = reshape(a_v, a_v.shape + (1,))
    return linear(tsum(weights * v, axis=-2), params, "vis.P_s")


def fuse_visual(v_g, v_s) -> Tensor:
    v_g, v_s = as_tensor(v_g), as_tensor(v_s)
    if v_g.shape != v_s.shape:
        raise ShapeError(f"cannot fuse visual vectors of shapes {v_g.shape} and {v_s.shape}")
    return (v_g + v_s) * 0.5
