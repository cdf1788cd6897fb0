"""Bidirectional retrieval metrics and the ablation runner."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datasets import Sample
from .errors import UsageError
from .model import FULL, Variant, embed_images, encode_sentences, text_for_images
from .nn import Params
from .objective import cosine_matrix, cosine_rows
from .tensor import no_grad
from .text import Vocabulary, tokenize

KS = (1, 5, 10)
REPORT_COLUMNS = ("sR@1", "sR@5", "sR@10", "iR@1", "iR@5", "iR@10", "mR")


@dataclass(frozen=True)
class RetrievalReport:
    """Sentence retrieval (image queries) and image retrieval (sentence queries)."""

    s_r1: float
    s_r5: float
    s_r10: float
    i_r1: float
    i_r5: float
    i_r10: float

    @property
    def recalls(self) -> tuple[float, ...]:
        return (self.s_r1, self.s_r5, self.s_r10, self.i_r1, self.i_r5, self.i_r10)

    @property
    def mr(self) -> float:
        return mean_recall(self.recalls)

    def row(self) -> tuple[float, ...]:
        return self.recalls + (self.mr,)

    @classmethod
    def from_ranks(cls, image_query_ranks, sentence_query_ranks) -> "RetrievalReport":
        s = [recall_at_k(image_query_ranks, k) for k in KS]
        i = [recall_at_k(sentence_query_ranks, k) for k in KS]
        return cls(*s, *i)


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    """Fraction of queries whose (1-based) ground-truth rank is at most ``k``."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        return 0.0
    if np.any(ranks < 1):
        raise UsageError("ranks are 1-based")
    return float(np.count_nonzero(ranks <= k)) / ranks.size


def mean_recall(recalls: Sequence[float]) -> float:
    if len(recalls) != 6:
        raise UsageError(f"mR needs the six recall values, got {len(recalls)}")
    return sum(recalls) / 6.0


def rank_from_similarity(sim: np.ndarray, caption_image: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Best ground-truth rank per image query and per sentence query.

    ``sim`` is N x (number of captions); ``caption_image[c]`` is the image of
    caption c. Sorting is descending with ties broken by lower gallery index.
    """
    sim = np.asarray(sim, dtype=np.float64)
    caption_image = np.asarray(caption_image)
    n_img, n_cap = sim.shape
    if n_img == 0 or n_cap == 0:
        raise UsageError("empty gallery")
    if caption_image.shape != (n_cap,):
        raise UsageError("caption_image must give one image index per caption")
    img_ranks = np.empty(n_img, dtype=np.int64)
    for i in range(n_img):
        order = np.argsort(-sim[i], kind="stable")
        pos = np.nonzero(caption_image[order] == i)[0]
        if pos.size == 0:
            raise UsageError(f"image {i} has no ground-truth caption")
        img_ranks[i] = pos[0] + 1
    cap_ranks = np.empty(n_cap, dtype=np.int64)
    for c in range(n_cap):
        order = np.argsort(-sim[:, c], kind="stable")
        cap_ranks[c] = int(np.nonzero(order == caption_image[c])[0][0]) + 1
    return img_ranks, cap_ranks


def rank_all(image_embs, text_embs, caption_image: Sequence[int] | None = None):
    """Cosine similarity matrix between fixed embeddings plus both rank lists.

    Without ``caption_image`` the captions are assumed grouped per image,
    C = len(text_embs) / len(image_embs) consecutive captions each.
    """
    image_embs = np.asarray(image_embs, dtype=np.float64)
    text_embs = np.asarray(text_embs, dtype=np.float64)
    if image_embs.shape[0] == 0 or text_embs.shape[0] == 0:
        raise UsageError("empty gallery")
    if caption_image is None:
        per = text_embs.shape[0] // image_embs.shape[0]
        if per * image_embs.shape[0] != text_embs.shape[0]:
            raise UsageError("caption count is not a multiple of the image count")
        caption_image = np.repeat(np.arange(image_embs.shape[0]), per)
    with no_grad():
        sim = cosine_matrix(image_embs, text_embs).data
    img_ranks, cap_ranks = rank_from_similarity(sim, caption_image)
    return sim, img_ranks, cap_ranks


def _num_threads() -> int:
    try:
        return max(1, int(os.environ.get("SAN_NUM_THREADS", "1")))
    except ValueError:
        return 1


def similarity_for_samples(
    params: Params,
    samples: Sequence[Sample],
    vocab: Vocabulary,
    variant: Variant = FULL,
    max_len: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    """N x (total captions) similarity and the caption-to-image index."""
    captions = [tokenize(c, vocab, max_len) for s in samples for c in s.captions]
    caption_image = np.asarray([i for i, s in enumerate(samples) for _ in s.captions])
    with no_grad():
        emb = embed_images(np.stack([s.image for s in samples]), params, variant)
        vis = emb.select(variant)

        def column(tokens):
            with no_grad():
                (enc,) = encode_sentences([tokens], params)
                text, _ = text_for_images(enc, vis, params, variant)
                if text.ndim == 1:
                    return cosine_matrix(vis, text.data[None, :]).data[:, 0]
                return cosine_rows(vis, text).data

        threads = _num_threads()
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                cols = list(pool.map(column, captions))
        else:
            cols = [column(t) for t in captions]
    return np.stack(cols, axis=1), caption_image


def evaluate(
    params: Params,
    samples: Sequence[Sample],
    vocab: Vocabulary,
    variant: Variant = FULL,
    max_len: int = 16,
) -> RetrievalReport:
    sim, caption_image = similarity_for_samples(params, samples, vocab, variant, max_len)
    return RetrievalReport.from_ranks(*rank_from_similarity(sim, caption_image))


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------
def report_csv(rows: Sequence[tuple[str, RetrievalReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("variant",) + REPORT_COLUMNS)
    for name, rep in rows:
        writer.writerow((name,) + tuple(f"{v:.6f}" for v in rep.row()))
    return buf.getvalue()


def report_table(rows: Sequence[tuple[str, RetrievalReport]]) -> str:
    width = max([len("variant")] + [len(n) for n, _ in rows])
    head = "variant".ljust(width) + "".join(c.rjust(8) for c in REPORT_COLUMNS)
    lines = [head, "-" * len(head)]
    for name, rep in rows:
        lines.append(name.ljust(width) + "".join(f"{100 * v:8.1f}" for v in rep.row()))
    return "\n".join(lines) + "\n"


def mean_report(reports: Sequence[RetrievalReport]) -> RetrievalReport:
    arr = np.asarray([r.recalls for r in reports])
    return RetrievalReport(*(float(x) for x in arr.mean(axis=0)))


def run_ablation(
    variants: Sequence[Variant | str],
    config,
    train_samples: Sequence[Sample],
    test_samples: Sequence[Sample],
    seeds: Sequence[int] = (0,),
    progress=None,
) -> dict[str, list[RetrievalReport]]:
    """Train and test every variant under the same seeds and data split.

    Stage 1 runs once per seed and is shared by all variants of that seed.
    Returns variant name -> one report per seed.
    """
    from .training import train_stage1, train_stage2

    parsed = [v if isinstance(v, Variant) else Variant.parse(v) for v in variants]
    if not parsed:
        raise UsageError("no ablation variants given")
    results: dict[str, list[RetrievalReport]] = {str(v): [] for v in parsed}
    for seed in seeds:
        cfg = _with(config, seed=seed)
        stage1 = train_stage1(cfg, train_samples)
        for v in parsed:
            res = train_stage2(_with(cfg, variant=str(v)), train_samples, stage1)
            rep = evaluate(res.params, test_samples, res.vocab, v, max_len=cfg.max_len)
            results[str(v)].append(rep)
            if progress is not None:
                progress(seed, v, rep)
    return results


def _with(config, **changes):
    from dataclasses import replace

    return replace(config, **changes)
