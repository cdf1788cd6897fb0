"""Binary checkpoint container.

Layout (all integers little-endian u32)::

    b"SANCKPT1" | version
    repeated:  name_len | name (utf-8) | rank | dims... | float64 LE payload
    name_len == 0 terminates the records
    vocabulary: "token<TAB>id" lines in id order, utf-8, to end of file
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError
from .nn import Params
from .text import Vocabulary

MAGIC = b"SANCKPT1"
VERSION = 1
_U32 = struct.Struct("<I")


def dumps(params: Mapping[str, object], vocab: Vocabulary) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION)]
    for name in sorted(params):
        value = params[name]
        arr = np.asarray(getattr(value, "data", value), dtype="<f8")
        encoded = name.encode("utf-8")
        if not encoded:
            raise CheckpointError("parameter names must be non-empty")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr).tobytes())
    parts.append(_U32.pack(0))
    parts.append("".join(line + "\n" for line in vocab.to_lines()).encode("utf-8"))
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], Vocabulary]:
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)

    def u32() -> int:
        nonlocal pos
        if pos + 4 > len(blob):
            raise CheckpointError("truncated checkpoint")
        (v,) = _U32.unpack_from(blob, pos)
        pos += 4
        return v

    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arrays: dict[str, np.ndarray] = {}
    while True:
        name_len = u32()
        if name_len == 0:
            break
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        shape = tuple(u32() for _ in range(u32()))
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise CheckpointError(f"truncated payload for {name!r}")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    vocab = Vocabulary.from_lines(blob[pos:].decode("utf-8").splitlines())
    return arrays, vocab


def save(path: str | Path, params: Mapping[str, object], vocab: Vocabulary) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(params, vocab))
    return path


def load(path: str | Path) -> tuple[dict[str, np.ndarray], Vocabulary]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())


def restore(params: Params, arrays: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into an existing parameter set, checking every shape."""
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise CheckpointError(f"checkpoint parameters differ: missing={missing[:5]} unexpected={extra[:5]}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arrays[name].shape} != model shape {p.shape}")
        p.data[...] = arrays[name]
