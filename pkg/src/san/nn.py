"""Named parameter storage, deterministic initialisation and small layer helpers."""

from __future__ import annotations

import hashlib
from typing import Iterable

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, avg_pool2d, conv2d, matmul, prelu, reshape, transpose

PRELU_INIT = 0.25


def _name_seed(seed: int, name: str) -> list[int]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int(seed) & 0xFFFFFFFF, int.from_bytes(digest[:8], "little")]


def glorot_bound(shape: tuple[int, ...]) -> float:
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 4:
        receptive = shape[2] * shape[3]
        fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    else:
        raise ShapeError(f"no fan definition for shape {shape}")
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class Params(dict):
    """Ordered mapping of parameter name to trainable :class:`Tensor`."""

    def add_weight(self, name: str, shape: tuple[int, ...], seed: int) -> Tensor:
        # seeding from (seed, name) makes values independent of creation order
        rng = np.random.default_rng(_name_seed(seed, name))
        a = glorot_bound(shape)
        return self._put(name, rng.uniform(-a, a, size=shape))

    def add_zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._put(name, np.zeros(shape))

    def add_const(self, name: str, shape: tuple[int, ...], value: float) -> Tensor:
        return self._put(name, np.full(shape, float(value)))

    def _put(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self[name] = t
        return t

    def subset(self, prefixes: str | Iterable[str]) -> "Params":
        if isinstance(prefixes, str):
            prefixes = (prefixes,)
        prefixes = tuple(prefixes)
        return Params((k, v) for k, v in self.items() if k.startswith(prefixes))

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            self[k].data[...] = v

    def count(self) -> int:
        return sum(p.size for p in self.values())


def add_linear(params: Params, name: str, n_in: int, n_out: int, seed: int) -> None:
    params.add_weight(f"{name}.weight", (n_out, n_in), seed)
    params.add_zeros(f"{name}.bias", (n_out,))


def add_conv(params: Params, name: str, c_in: int, c_out: int, seed: int, ksize: int = 3, act: bool = True) -> None:
    params.add_weight(f"{name}.weight", (c_out, c_in, ksize, ksize), seed)
    params.add_zeros(f"{name}.bias", (c_out,))
    if act:
        params.add_const(f"{name}.slope", (c_out,), PRELU_INIT)


def linear(x, params: Params, name: str) -> Tensor:
    """Affine map ``W x + b`` applied to a vector or to each row of a matrix."""
    w, b = params[f"{name}.weight"], params[f"{name}.bias"]
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"{name}: input dim {x.shape[-1]} does not match weight {w.shape}")
    if x.ndim == 1:
        return reshape(matmul(reshape(x, (1, -1)), transpose(w)), (w.shape[0],)) + b
    if x.ndim == 2:
        return matmul(x, transpose(w)) + b
    lead = x.shape[:-1]
    flat = matmul(reshape(x, (-1, x.shape[-1])), transpose(w))
    return reshape(flat, lead + (w.shape[0],)) + b


def conv_layer(x, params: Params, name: str, stride: int = 1, padding: int = 1) -> Tensor:
    """conv2d with bias, followed by PReLU when the layer has a slope."""
    out = conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride, padding=padding)
    slope = params.get(f"{name}.slope")
    if slope is not None:
        out = prelu(out, slope, axis=out.ndim - 3)
    return out


def down_stage(x, params: Params, name: str) -> Tensor:
    """3x3 conv + PReLU at full resolution, then 2x2 average pooling."""
    return avg_pool2d(conv_layer(x, params, name), 2, 2)
