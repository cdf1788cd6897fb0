"""Synthetic shapes-and-captions corpus with ground-truth saliency masks.

Each image shows one or two non-overlapping coloured shapes on a noisy gray
background. The mask marks exactly the shape pixels and every caption names
every shape by colour and kind, so retrieval and saliency targets are both
known by construction. Files are binary PPM (images), PGM (masks) and a JSON
Lines manifest.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError, GenerationError, UsageError

COLORS = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.75, 0.2),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.9, 0.85, 0.15),
}
KINDS = ("circle", "square", "triangle")

SINGLE_TEMPLATES = (
    "a {a}",
    "there is a {a}",
    "a {a} on a gray background",
    "the picture shows one {a}",
    "a single {a} in the image",
)
PAIR_TEMPLATES = (
    "a {a} and a {b}",
    "the {a} is {rel} the {b}",
    "there is a {a} next to a {b}",
    "a {b} and a {a} on a gray background",
    "two shapes, a {a} and a {b}",
)

MANIFEST_NAME = "manifest.jsonl"
_PLACEMENT_TRIES = 200
_RESEEDS = 8


@dataclass
class Sample:
    id: str
    image: np.ndarray  # 3 x H x W in [0, 1]
    mask: np.ndarray  # H x W in {0, 1}
    captions: list[str]
    shapes: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# PNM containers
# ---------------------------------------------------------------------------
def write_ppm(path: Path, rgb: np.ndarray) -> None:
    """Write an H x W x 3 uint8 array as binary P6."""
    h, w, _ = rgb.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def write_pgm(path: Path, gray: np.ndarray) -> None:
    h, w = gray.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(gray, dtype=np.uint8).tobytes())


def _read_pnm(path: Path, magic: bytes) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != magic:
        raise DataError(f"{path}: expected {magic.decode()} file, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit files are supported")
    channels = 3 if magic == b"P6" else 1
    body = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    if body.size != w * h * channels:
        raise DataError(f"{path}: expected {w * h * channels} pixel bytes, found {body.size}")
    return body.reshape(h, w, channels) if channels == 3 else body.reshape(h, w)


def read_ppm(path: Path) -> np.ndarray:
    return _read_pnm(path, b"P6")


def read_pgm(path: Path) -> np.ndarray:
    return _read_pnm(path, b"P5")


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------
def all_configurations() -> list[tuple[tuple[str, str], ...]]:
    """Every admissible set of (color, kind) pairs, colours distinct within a set."""
    singles = [((c, k),) for c in COLORS for k in KINDS]
    pairs = []
    for c1, c2 in itertools.combinations(COLORS, 2):
        for k1 in KINDS:
            for k2 in KINDS:
                pairs.append(((c1, k1), (c2, k2)))
    return singles + pairs


def shape_mask(kind: str, top: int, left: int, size: int, image_size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:image_size, 0:image_size] + 0.5
    if kind == "square":
        return (yy >= top) & (yy < top + size) & (xx >= left) & (xx < left + size)
    if kind == "circle":
        r = size / 2.0
        return (yy - top - r) ** 2 + (xx - left - r) ** 2 <= r * r
    if kind == "triangle":
        # apex at top-centre, base along the bottom edge of the box
        cx = left + size / 2.0
        rel = (yy - top) / size
        inside_y = (yy >= top) & (yy < top + size)
        return inside_y & (np.abs(xx - cx) <= rel * size / 2.0)
    raise GenerationError(f"unknown shape kind {kind!r}")


def _relation(a: dict, b: dict) -> str:
    dy = a["center"][0] - b["center"][0]
    dx = a["center"][1] - b["center"][1]
    if abs(dx) >= abs(dy):
        return "left of" if dx < 0 else "right of"
    return "above" if dy < 0 else "below"


def _captions(shapes: list[dict], n_captions: int, rng: np.random.Generator) -> list[str]:
    names = [f"{s['color']} {s['kind']}" for s in shapes]
    if len(shapes) == 1:
        templates = SINGLE_TEMPLATES
        fill = [{"a": names[0]}] * len(templates)
    else:
        templates = PAIR_TEMPLATES
        fill = []
        for _ in templates:
            i = int(rng.integers(2))
            a, b = shapes[i], shapes[1 - i]
            fill.append({"a": names[i], "b": names[1 - i], "rel": _relation(a, b)})
    if n_captions <= len(templates):
        chosen = rng.choice(len(templates), size=n_captions, replace=False)
    else:
        chosen = rng.choice(len(templates), size=n_captions, replace=True)
    return [templates[int(t)].format(**fill[int(t)]) for t in chosen]


def render_sample(
    config: Sequence[tuple[str, str]],
    rng: np.random.Generator,
    image_size: int = 32,
    n_captions: int = 2,
) -> tuple[np.ndarray, np.ndarray, list[str], list[dict]]:
    """Render one configuration; returns (uint8 H x W x 3, uint8 mask, captions, shapes)."""
    lo = max(4, round(image_size * 0.28))
    hi = max(lo, round(image_size * 0.4))
    occupied = np.zeros((image_size, image_size), dtype=bool)
    shapes: list[dict] = []
    for color, kind in config:
        for _ in range(_PLACEMENT_TRIES):
            size = int(rng.integers(lo, hi + 1))
            top = int(rng.integers(0, image_size - size + 1))
            left = int(rng.integers(0, image_size - size + 1))
            m = shape_mask(kind, top, left, size, image_size)
            grown = m.copy()
            grown[1:, :] |= m[:-1, :]
            grown[:-1, :] |= m[1:, :]
            grown[:, 1:] |= m[:, :-1]
            grown[:, :-1] |= m[:, 1:]
            if not np.any(grown & occupied):
                break
        else:
            raise GenerationError(f"could not place {color} {kind} without overlap")
        occupied |= m
        shapes.append({
            "color": color, "kind": kind, "top": top, "left": left, "size": size,
            "area": int(m.sum()), "center": [top + size / 2.0, left + size / 2.0], "_mask": m,
        })

    gray = 0.5 + 0.08 * rng.standard_normal((image_size, image_size, 1))
    img = gray + 0.02 * rng.standard_normal((image_size, image_size, 3))
    for s in shapes:
        rgb = np.asarray(COLORS[s["color"]]) + 0.04 * rng.standard_normal(3)
        pix = rgb + 0.03 * rng.standard_normal((image_size, image_size, 3))
        img = np.where(s["_mask"][..., None], pix, img)
    img8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    mask8 = np.where(occupied, 255, 0).astype(np.uint8)
    captions = _captions(shapes, n_captions, rng)
    for s in shapes:
        del s["_mask"]
    return img8, mask8, captions, shapes


def _to_sample(sid: str, img8: np.ndarray, mask8: np.ndarray, captions, shapes) -> Sample:
    image = np.transpose(img8.astype(np.float64) / 255.0, (2, 0, 1))
    return Sample(sid, image, (mask8 > 0).astype(np.float64), list(captions), list(shapes))


def check_caption_bags(samples: Sequence[Sample]) -> None:
    """Distinct shape configurations must never share a caption bag (exhaustive)."""
    keys = [frozenset((s["color"], s["kind"]) for s in smp.shapes) for smp in samples]
    bags = [frozenset(smp.captions) for smp in samples]
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            if keys[i] != keys[j] and bags[i] == bags[j]:
                raise GenerationError(f"samples {samples[i].id} and {samples[j].id} share captions")


def generate_samples(seed: int, n_samples: int, image_size: int = 32, n_captions: int = 2) -> list[Sample]:
    """Deterministic in-memory corpus.

    Configurations are dealt from seeded permutations of all admissible ones,
    so a corpus smaller than the configuration count has no repeats.
    """
    if n_samples < 1:
        raise UsageError("n_samples must be at least 1")
    if n_captions < 1:
        raise ConfigurationError("need at least one caption per image")
    if image_size < 16 or image_size % 8:
        raise ConfigurationError("image_size must be a multiple of 8 and at least 16")
    configs = all_configurations()
    deal_rng = np.random.default_rng([seed, 0x5EED])
    order: list[int] = []
    while len(order) < n_samples:
        order.extend(int(i) for i in deal_rng.permutation(len(configs)))
    samples = []
    for idx in range(n_samples):
        sid = f"{idx:06d}"
        for attempt in range(_RESEEDS):
            rng = np.random.default_rng([seed, idx, attempt])
            try:
                rendered = render_sample(configs[order[idx]], rng, image_size, n_captions)
                break
            except GenerationError:
                continue
        else:
            raise GenerationError(f"sample {sid}: placement failed after {_RESEEDS} reseeds")
        samples.append(_to_sample(sid, *rendered))
    check_caption_bags(samples)
    return samples


def write_corpus(samples: Sequence[Sample], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        img8 = np.clip(np.rint(np.transpose(s.image, (1, 2, 0)) * 255.0), 0, 255).astype(np.uint8)
        write_ppm(out / "images" / f"{s.id}.ppm", img8)
        write_pgm(out / "masks" / f"{s.id}.pgm", (s.mask > 0).astype(np.uint8) * 255)
        record = {
            "id": s.id,
            "image": f"images/{s.id}.ppm",
            "mask": f"masks/{s.id}.pgm",
            "captions": s.captions,
            "shapes": s.shapes,
        }
        lines.append(json.dumps(record, sort_keys=True))
    manifest = out / MANIFEST_NAME
    manifest.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return manifest


def generate_corpus(
    seed: int,
    n_samples: int,
    out_dir: str | Path,
    image_size: int = 32,
    n_captions: int = 2,
) -> Path:
    """Generate and write a corpus; returns the manifest path."""
    return write_corpus(generate_samples(seed, n_samples, image_size, n_captions), out_dir)


def load_manifest(path: str | Path) -> list[Sample]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    samples: list[Sample] = []
    seen: set[str] = set()
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            sid, img_rel, mask_rel, captions = rec["id"], rec["image"], rec["mask"], rec["captions"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: malformed manifest line") from exc
        if sid in seen:
            raise DataError(f"{path}:{n}: duplicate id {sid!r}")
        if not isinstance(captions, list) or not captions:
            raise DataError(f"{path}:{n}: captions must be a non-empty list")
        seen.add(sid)
        img_path, mask_path = root / img_rel, root / mask_rel
        for p in (img_path, mask_path):
            if not p.exists():
                raise DataError(f"{path}:{n}: missing file {p}")
        try:
            img8, mask8 = read_ppm(img_path), read_pgm(mask_path)
        except DataError as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
        if not np.all((mask8 == 0) | (mask8 == 255)):
            raise DataError(f"{path}:{n}: mask {mask_path} is not binary")
        samples.append(_to_sample(sid, img8, mask8, captions, rec.get("shapes", [])))
    return samples


def split(samples: Sequence | int, ratios: Sequence[float], seed: int) -> tuple[list[int], list[int], list[int]]:
    """Seeded permutation sliced into train/val/test index lists."""
    n = samples if isinstance(samples, int) else len(samples)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigurationError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    perm = [int(i) for i in np.random.default_rng([seed, 0x5B17]).permutation(n)]
    n_train = int(math.floor(ratios[0] * n + 1e-9))
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
