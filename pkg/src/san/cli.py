"""Command-line entry point: ``san <command> [flags]``.

Exit codes: 0 success, 1 usage/configuration error, 2 data or checkpoint
error, 3 numeric failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint, gradsuite
from .datasets import generate_corpus, load_manifest, split, write_pgm
from .errors import ConfigurationError, DataError, SanError, UsageError
from .evaluation import (
    evaluate,
    mean_report,
    report_csv,
    report_table,
    run_ablation,
)
from .model import ABLATION_GRID, Variant, embed_images, encode_sentences, init_params, text_for_images
from .nn import Params
from .objective import cosine_rows
from .tensor import no_grad, sigmoid, stack
from .text import Vocabulary, tokenize
from .training import TrainConfig, train_stage1, train_stage2, write_log

log = logging.getLogger("san")

# keys a config file may carry on top of the training configuration
PATH_KEYS = ("data", "checkpoint", "out")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
def load_config(args) -> tuple[TrainConfig, dict]:
    """Merge the JSON config file with command-line overrides."""
    raw: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
    paths = {k: raw.pop(k) for k in PATH_KEYS if k in raw}
    for key in PATH_KEYS:
        if getattr(args, key, None) is not None:
            paths[key] = getattr(args, key)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "variant", None) is not None and "," not in args.variant:
        raw["variant"] = args.variant
    return TrainConfig.from_dict(raw), paths


def _echo_config(out: Path, cfg: TrainConfig, paths: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    body = {**cfg.to_dict(), **{k: str(v) for k, v in paths.items()}}
    (out / "config.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(paths: dict, key: str) -> Path:
    if not paths.get(key):
        raise UsageError(f"--{key} is required")
    return Path(paths[key])


def _splits(cfg: TrainConfig, samples):
    tr, va, te = split(samples, cfg.split, cfg.seed)
    return [samples[i] for i in tr], [samples[i] for i in va], [samples[i] for i in te]


def _load_model(cfg: TrainConfig, ckpt: Path) -> tuple[Params, Vocabulary]:
    arrays, vocab = checkpoint.load(ckpt)
    params = init_params(cfg.model_config(), len(vocab), cfg.seed)
    checkpoint.restore(params, arrays)
    return params, vocab


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    if args.out is None:
        raise UsageError("gen-data: --out is required")
    if args.n < 1:
        raise UsageError("gen-data: --n must be at least 1")
    manifest = generate_corpus(args.seed, args.n, args.out, args.image_size, args.captions)
    print(f"wrote {args.n} samples to {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg, paths = load_config(args)
    out = _require(paths, "out")
    samples = load_manifest(_require(paths, "data"))
    if not samples:
        raise DataError("corpus is empty")
    train, val, _ = _splits(cfg, samples)
    if not train:
        raise ConfigurationError("the training split is empty")
    _echo_config(out, cfg, paths)
    stage1 = None
    if args.stage in ("1", "both"):
        stage1 = train_stage1(cfg, train, out_dir=out)
        print(f"stage 1: {len(stage1.log)} iterations, final loss {stage1.log[-1]['loss'] if stage1.log else float('nan'):.6f}")
    if args.stage in ("2", "both"):
        if stage1 is None:
            stage1 = paths.get("checkpoint") or out / "stage1.ckpt"
        result = train_stage2(cfg, train, stage1, val_samples=val, out_dir=out)
        rep = evaluate(result.params, train, result.vocab, cfg.parsed_variant, cfg.max_len)
        if result.log:
            result.log[-1]["train_sR@1"], result.log[-1]["train_iR@1"] = rep.s_r1, rep.i_r1
            write_log(result.log, out / "stage2_log.csv")
        print(f"stage 2: train R@1 sentence={rep.s_r1:.4f} image={rep.i_r1:.4f}")
    return 0


def _write_report(out: Path | None, rows) -> None:
    text = report_table(rows)
    print(text, end="")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report_csv(rows), encoding="utf-8")
        (out / "report.txt").write_text(text, encoding="utf-8")


def _parse_variants(text: str | None) -> list[Variant]:
    if not text:
        return list(ABLATION_GRID)
    return [Variant.parse(v) for v in text.split(",") if v.strip()]


def cmd_eval(args) -> int:
    cfg, paths = load_config(args)
    out = Path(paths["out"]) if paths.get("out") else None
    samples = load_manifest(_require(paths, "data"))
    train, _, test = _splits(cfg, samples)
    chosen = {"train": train, "test": test, "all": samples}[args.split]
    if not chosen:
        raise DataError(f"the {args.split} split is empty")
    if args.ablate:
        seeds = [int(s) for s in args.seeds.split(",")]

        def progress(seed, variant, rep):
            print(f"seed {seed} {variant}: mR={rep.mr:.4f}", flush=True)

        results = run_ablation(_parse_variants(args.variant), cfg, train, chosen, seeds, progress)
        rows = [(name, mean_report(reps)) for name, reps in results.items()]
    else:
        params, vocab = _load_model(cfg, _require(paths, "checkpoint"))
        variant = cfg.parsed_variant
        rows = [(str(variant), evaluate(params, chosen, vocab, variant, cfg.max_len))]
    if out is not None:
        _echo_config(out, cfg, paths)
    _write_report(out, rows)
    return 0


def cmd_retrieve(args) -> int:
    cfg, paths = load_config(args)
    if not args.query:
        raise UsageError("retrieve: --query is required")
    samples = load_manifest(_require(paths, "data"))
    if not samples:
        raise DataError("corpus is empty")
    params, vocab = _load_model(cfg, _require(paths, "checkpoint"))
    variant = cfg.parsed_variant
    tokens = tokenize(args.query, vocab, cfg.max_len)
    with no_grad():
        vis = embed_images(np.stack([s.image for s in samples]), params, variant).select(variant)
        (enc,) = encode_sentences([tokens], params)
        text, _ = text_for_images(enc, vis, params, variant)
        if text.ndim == 1:
            text = stack([text] * len(samples), axis=0)
        scores = cosine_rows(vis, text).data
    order = np.argsort(-scores, kind="stable")[: args.top]
    lines = [f"{rank}\t{samples[i].id}\t{scores[i]:.6f}" for rank, i in enumerate(order, 1)]
    print("\n".join(lines))
    if paths.get("out"):
        out = Path(paths["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "retrieval.tsv").write_text("rank\tid\tscore\n" + "\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_export_attention(args) -> int:
    cfg, paths = load_config(args)
    out = _require(paths, "out")
    samples = {s.id: s for s in load_manifest(_require(paths, "data"))}
    if args.sample not in samples:
        raise DataError(f"unknown sample id {args.sample!r}")
    sample = samples[args.sample]
    variant = cfg.parsed_variant
    if not (variant.uses_saliency and variant.uses_sta):
        raise UsageError(f"variant {variant} has no saliency or no textual attention to export")
    params, vocab = _load_model(cfg, _require(paths, "checkpoint"))
    tokens = tokenize(args.caption or sample.captions[0], vocab, cfg.max_len)
    with no_grad():
        emb = embed_images(sample.image[None], params, variant)
        (enc,) = encode_sentences([tokens], params)
        _, a_t = text_for_images(enc, emb.select(variant), params, variant)
        heat = sigmoid(emb.s1).data[0]
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / f"{sample.id}_saliency.pgm", np.rint(heat * 255.0).astype(np.uint8))
    grid = cfg.model_config().grid
    a_v = emb.a_v.data[0].reshape(grid, grid)
    with open(out / f"{sample.id}_a_v.csv", "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows([[repr(float(x)) for x in row] for row in a_v])
    with open(out / f"{sample.id}_a_t.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("token", "weight"))
        writer.writerows((tok, repr(float(w))) for tok, w in zip(tokens.tokens, a_t.data[0]))
    print(f"exported attention for {sample.id} to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    modules = None
    if args.module:
        modules = [m for part in args.module for m in part.split(",") if m]
    results = gradsuite.run_suite(modules, seed=args.seed if args.seed is not None else 0)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.module:<14} max relative error {r.worst:.3e}  {status}")
    return 0 if all(r.passed for r in results) else 3


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="san", description="Saliency-guided image-sentence matching toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, *, data=True, checkpoint_flag=False):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--variant", help="ablation variant such as FV+FT(G-S) or GV+GT")
        if data:
            p.add_argument("--data", help="corpus directory or manifest path")
        if checkpoint_flag:
            p.add_argument("--checkpoint")

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--out")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--captions", type=int, default=2)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="two-stage training")
    common(p, checkpoint_flag=True)
    p.add_argument("--stage", choices=("1", "2", "both"), default="both")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics on a split")
    common(p, checkpoint_flag=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--ablate", action="store_true", help="train and compare ablation variants")
    p.add_argument("--seeds", default="0", help="comma-separated seeds for --ablate")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="rank corpus images for a free-text query")
    common(p, checkpoint_flag=True)
    p.add_argument("--query")
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("export-attention", help="write saliency heatmap and attention weights")
    common(p, checkpoint_flag=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--caption", help="caption to attend over (default: the sample's first)")
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("gradcheck", help="finite-difference gradient self-test")
    p.add_argument("--module", action="append", help=f"one of {', '.join(gradsuite.CHECKS)}")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("no command given; see --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except SanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
