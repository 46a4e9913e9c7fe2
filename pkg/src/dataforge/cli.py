"""Command-line pipeline driver.

One JSON config file supplies defaults; explicit flags override it. All
reports go to standard output as JSON. Exit codes: 0 success, 1
validation violations found, 2 configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import DataForgeError
from .manifest import FilterConfig, filter_entry, load_manifest
from .mixing import MixSpec, SourceType, Stage
from .pipeline import (
    TokenizerContext,
    detokenize_tokens,
    load_waveform,
    pack_shards,
    shard_stats,
    tokenize_corpus,
    validate_shards,
)
from .rvq import RvqCodebooks, waveform_frames
from .sample import Sample
from .templates import TemplateSet
from .visual import FramePolicy, GridQuantizer
from .vocab import ByteTextCodec, VocabLayout, build_layout

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_CONFIG = 2


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise DataForgeError("config file must hold a JSON object")
    return doc


def _setting(args, config: dict, name: str, default):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    return config.get(name, default)


def _emit(doc: dict) -> None:
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _load_layout(path: str) -> VocabLayout:
    with open(path, "r", encoding="utf-8") as fh:
        return VocabLayout.from_json(fh.read())


def cmd_build_vocab(args, config) -> int:
    text_size = int(_setting(args, config, "text-size", ByteTextCodec().text_size))
    layout = build_layout(text_size)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(layout.to_json() + "\n")
    _emit({"out": args.out, "text_size": text_size, "total_size": layout.total_size})
    return EXIT_OK


def cmd_train_rvq(args, config) -> int:
    if args.frames:
        frames = np.load(args.frames).astype(np.float32)
    else:
        waveform, rate = load_waveform(args.audio, int(_setting(args, config, "sample-rate", 16000)))
        frames = waveform_frames(waveform, rate, args.frame_rate, bands=args.bands)
    books = RvqCodebooks.train(
        frames,
        layers=args.layers,
        codebook_size=args.codebook_size,
        iters=args.iters,
        seed=int(_setting(args, config, "seed", 0)),
        frame_rate=args.frame_rate,
    )
    books.save(args.out)
    _emit(
        {
            "out": args.out,
            "layers": books.layers,
            "codebook_size": books.codebook_size,
            "dim": books.dim,
            "training_frames": int(frames.shape[0]),
        }
    )
    return EXIT_OK


def _tokenizer_context(args, config) -> TokenizerContext:
    layout = _load_layout(args.vocab)
    codebooks = RvqCodebooks.load(args.rvq) if args.rvq else None
    if args.image_codebook:
        quantizer = GridQuantizer.load(args.image_codebook)
    else:
        quantizer = GridQuantizer.uniform()
    policy = FramePolicy(
        context_budget=int(_setting(args, config, "window", 2800)),
    )
    return TokenizerContext(
        layout=layout,
        codec=ByteTextCodec(),
        codebooks=codebooks,
        quantizer=quantizer,
        stage=Stage(_setting(args, config, "stage", "I")),
        seed=int(_setting(args, config, "seed", 0)),
        frame_policy=policy,
        sample_rate=int(_setting(args, config, "sample-rate", 16000)),
        templates=TemplateSet.from_dict(config.get("templates", {})),
    )


def _filter_config(config: dict) -> FilterConfig:
    fields = {
        k: config[k]
        for k in (
            "pair_clip_threshold",
            "doc_clip_threshold",
            "max_aspect",
            "min_side",
            "max_speech_seconds",
            "required_language",
            "literal_pair_clip_rule",
        )
        if k in config
    }
    return FilterConfig(**fields)


def cmd_tokenize(args, config) -> int:
    ctx = _tokenizer_context(args, config)
    filters = None if args.no_filter else _filter_config(config)
    entries = list(load_manifest(args.manifest))
    kept = 0
    dropped = []
    if filters is not None:
        for entry in entries:
            decision = filter_entry(entry, filters)
            if not decision.keep:
                dropped.append({"id": entry.id, "reason": decision.reason})
    with open(args.out, "w", encoding="utf-8") as fh:
        for source, sample, entry_id in tokenize_corpus(entries, ctx, filters):
            doc = sample.to_dict()
            doc["source_type"] = source.value
            doc["id"] = entry_id
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
            kept += 1
    _emit({"out": args.out, "samples": kept, "dropped": dropped})
    return EXIT_OK


def _load_samples(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            yield SourceType(doc["source_type"]), Sample.from_dict(doc), doc.get("id", "")


def cmd_pack(args, config) -> int:
    layout = _load_layout(args.vocab)
    if args.ratios:
        spec = MixSpec(ratios=tuple(int(r) for r in args.ratios.split(":")))
    else:
        spec = MixSpec.for_stage(Stage(_setting(args, config, "stage", "I")))
    report = pack_shards(
        _load_samples(args.samples),
        spec,
        layout,
        args.out_dir,
        window=int(_setting(args, config, "window", 2800)),
        num_batches=args.num_batches,
        batches_per_shard=int(_setting(args, config, "batches-per-shard", 64)),
        supervision=_setting(args, config, "supervision", "pretrain"),
        seed=args.shuffle_seed,
    )
    _emit(report.to_dict())
    return EXIT_OK


def cmd_validate(args, config) -> int:
    layout = _load_layout(args.vocab)
    report = validate_shards(args.shards, layout, alternating_speech=args.alternating)
    _emit(report)
    return EXIT_OK if report["ok"] else EXIT_VIOLATIONS


def cmd_stats(args, config) -> int:
    layout = _load_layout(args.vocab)
    _emit(shard_stats(args.shards, layout))
    return EXIT_OK


def cmd_detokenize(args, config) -> int:
    layout = _load_layout(args.vocab)
    with open(args.tokens, "r", encoding="utf-8") as fh:
        tokens = json.load(fh)
    codebooks = RvqCodebooks.load(args.rvq) if args.rvq else None
    segments = detokenize_tokens(tokens, layout, ByteTextCodec(), codebooks)
    _emit({"segments": segments})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dataforge",
        description="Multimodal token pipeline: tokenize, pack, validate training shards.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="write a vocabulary layout JSON")
    p.add_argument("--text-size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train-rvq", help="fit residual codebooks on audio features")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--frames", help=".npy of (T, D) feature frames")
    src.add_argument("--audio", help=".wav or .npy waveform")
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--codebook-size", type=int, default=1024)
    p.add_argument("--iters", type=int, default=40)
    p.add_argument("--frame-rate", type=int, default=50)
    p.add_argument("--bands", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sample-rate", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_rvq)

    p = sub.add_parser("tokenize", help="filter and tokenize a manifest into samples")
    p.add_argument("--manifest", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--rvq", default=None)
    p.add_argument("--image-codebook", default=None, help=".npy centroids; default uniform")
    p.add_argument("--stage", choices=["I", "II", "III"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sample-rate", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("pack", help="pack samples into fixed-window binary shards")
    p.add_argument("--samples", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--stage", choices=["I", "II", "III"], default=None)
    p.add_argument("--ratios", default=None, help="override stage preset, e.g. 2:2:6:6")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--num-batches", type=int, default=None)
    p.add_argument("--batches-per-shard", type=int, default=None)
    p.add_argument("--supervision", choices=["pretrain", "assistant"], default=None)
    p.add_argument("--shuffle-seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("validate", help="re-check invariants and grammar over shards")
    p.add_argument("shards", nargs="+")
    p.add_argument("--vocab", required=True)
    p.add_argument("--alternating", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="token composition report over shards")
    p.add_argument("shards", nargs="+")
    p.add_argument("--vocab", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("detokenize", help="map a token stream back to typed segments")
    p.add_argument("--tokens", required=True, help="JSON list of token ids")
    p.add_argument("--vocab", required=True)
    p.add_argument("--rvq", default=None)
    p.set_defaults(func=cmd_detokenize)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except DataForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
