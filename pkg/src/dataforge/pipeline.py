"""Operator-facing pipeline: manifest -> samples -> packed shards -> reports.

Per-entry randomness (direction coins) is derived from (seed, entry
index), so tokenization is deterministic regardless of worker layout and
two runs over the same manifest produce byte-identical shards.
"""

from __future__ import annotations

import os
import wave
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import (
    DataForgeError,
    ExhaustedSource,
    InvalidEntry,
    InvalidInput,
    SampleTooLong,
)
from .grammar import validate_stream
from .manifest import EntryKind, FilterConfig, ManifestEntry, filter_entry
from .mixing import SOURCE_ORDER, MixScheduler, MixSpec, SourceType
from .packing import DEFAULT_WINDOW, PackedBatch, PretrainAll, SftAssistantOnly, pack
from .rvq import RvqCodebooks, waveform_frames
from .sample import Sample, SampleBuilder
from .speech import parse_speech
from .templates import (
    VIDEO_TEXT_TO_VIDEO_FRACTION,
    Direction,
    PairKind,
    PairedRecord,
    TemplateSet,
    render_pretrain,
)
from .visual import (
    WRAPPED_IMAGE_LEN,
    FramePolicy,
    GridQuantizer,
    detect_scenes,
    parse_image,
    pool_grid,
    select_frames,
    serialize_image,
)
from .vocab import ByteTextCodec, VocabLayout
from .mixing import Stage
from . import shards as shardio

DEFAULT_SAMPLE_RATE = 16000


def load_image(path: str) -> np.ndarray:
    """Grayscale pixel grid from a PNG/NetPBM file."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float32)


def load_waveform(path: str, default_rate: int = DEFAULT_SAMPLE_RATE) -> tuple[np.ndarray, int]:
    """(waveform, sample_rate) from a .wav (16-bit PCM) or .npy file."""
    if path.endswith(".wav"):
        with wave.open(path, "rb") as fh:
            rate = fh.getframerate()
            n = fh.getnframes()
            raw = fh.readframes(n)
            data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
            if fh.getnchannels() > 1:
                data = data.reshape(-1, fh.getnchannels()).mean(axis=1)
        return data, rate
    return np.load(path).astype(np.float32).ravel(), default_rate


def load_video_frames(path: str) -> list[np.ndarray]:
    """Frames from a directory of images (sorted by name) or a (N, H, W) .npy stack."""
    if os.path.isdir(path):
        names = sorted(
            n for n in os.listdir(path) if n.lower().endswith((".png", ".pgm", ".ppm", ".pbm"))
        )
        if not names:
            raise InvalidInput(f"no frame images in {path}")
        return [load_image(os.path.join(path, n)) for n in names]
    stack = np.load(path)
    if stack.ndim != 3:
        raise InvalidInput(f"{path}: frame stack must be (N, H, W)")
    return [stack[i].astype(np.float32) for i in range(stack.shape[0])]


@dataclass
class TokenizerContext:
    """Models and config shared by all entries of one tokenization run."""

    layout: VocabLayout
    codec: ByteTextCodec
    codebooks: RvqCodebooks | None = None
    quantizer: GridQuantizer | None = None
    stage: Stage = Stage.I
    seed: int = 0
    frame_policy: FramePolicy = field(default_factory=FramePolicy)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    templates: TemplateSet = field(default_factory=TemplateSet)


def _entry_rng(ctx: TokenizerContext, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=ctx.seed, spawn_key=(index,)))


def _direction(entry: ManifestEntry, rng: np.random.Generator, to_modality_p: float) -> Direction:
    if entry.direction is not None:
        return Direction(entry.direction)
    return Direction.TO_MODALITY if rng.random() < to_modality_p else Direction.TO_TEXT


def _require_quantizer(ctx: TokenizerContext) -> GridQuantizer:
    if ctx.quantizer is None:
        raise InvalidInput("image entries need an image quantizer")
    return ctx.quantizer


def _tokenize_image_caption(entry: ManifestEntry, ctx: TokenizerContext, rng) -> Sample:
    if not entry.paths:
        raise InvalidEntry(f"entry {entry.id}: image entry has no payload path")
    tokens = _require_quantizer(ctx).quantize(load_image(entry.paths[0]))
    record = PairedRecord(
        kind=PairKind.IMAGE_CAPTION,
        direction=_direction(entry, rng, 0.5),
        text=entry.text,
        image=tokens,
    )
    return render_pretrain(record, ctx.stage, ctx.layout, ctx.codec, ctx.templates)


def _tokenize_text(entry: ManifestEntry, ctx: TokenizerContext) -> Sample:
    builder = SampleBuilder()
    builder.add("text", ctx.codec.encode(entry.text))
    return builder.build()


def _tokenize_interleaved(entry: ManifestEntry, ctx: TokenizerContext) -> Sample:
    if not entry.segments:
        raise InvalidEntry(f"entry {entry.id}: interleaved doc has no segments")
    quantizer = _require_quantizer(ctx)
    builder = SampleBuilder()
    for seg in entry.segments:
        if "text" in seg:
            builder.add("text", ctx.codec.encode(seg["text"]))
        elif "image" in seg:
            tokens = quantizer.quantize(load_image(seg["image"]))
            builder.add("image", serialize_image(tokens, ctx.layout))
        else:
            raise InvalidEntry(f"entry {entry.id}: segment needs 'text' or 'image'")
    return builder.build()


def _tokenize_video(entry: ManifestEntry, ctx: TokenizerContext, rng) -> Sample:
    if not entry.paths:
        raise InvalidEntry(f"entry {entry.id}: video entry has no payload path")
    if entry.duration_s is None:
        raise InvalidEntry(f"entry {entry.id}: video entry needs duration_s")
    frames = load_video_frames(entry.paths[0])
    direction = _direction(entry, rng, VIDEO_TEXT_TO_VIDEO_FRACTION)

    # Text length is known before frames are chosen; scenes come from the
    # pooled intensity features of the raw frame sequence.
    probe = PairedRecord(
        kind=PairKind.VIDEO_DESCRIPTION,
        direction=direction,
        text=entry.text,
        frames=(_require_quantizer(ctx).quantize(frames[0]),),
    )
    probe_sample = render_pretrain(probe, ctx.stage, ctx.layout, ctx.codec, ctx.templates)
    text_len = len(probe_sample) - WRAPPED_IMAGE_LEN

    feats = [pool_grid(f).ravel() / 255.0 for f in frames]
    cut_indices = detect_scenes(feats, ctx.frame_policy.scene_threshold)
    cut_times = [i * entry.duration_s / len(frames) for i in cut_indices]
    stamps = select_frames(entry.duration_s, text_len, cut_times, ctx.frame_policy)
    quantizer = _require_quantizer(ctx)
    chosen = []
    for ts in stamps:
        idx = min(int(ts / entry.duration_s * len(frames)), len(frames) - 1)
        chosen.append(quantizer.quantize(frames[idx]))
    record = PairedRecord(
        kind=PairKind.VIDEO_DESCRIPTION,
        direction=direction,
        text=entry.text,
        frames=tuple(chosen),
    )
    return render_pretrain(record, ctx.stage, ctx.layout, ctx.codec, ctx.templates)


def _tokenize_speech(entry: ManifestEntry, ctx: TokenizerContext, rng) -> Sample:
    if not entry.paths:
        raise InvalidEntry(f"entry {entry.id}: speech entry has no payload path")
    if ctx.codebooks is None:
        raise InvalidInput("speech entries need trained codebooks")
    waveform, rate = load_waveform(entry.paths[0], entry.sample_rate or ctx.sample_rate)
    frames = waveform_frames(waveform, rate, ctx.codebooks.frame_rate, bands=ctx.codebooks.dim)
    codes = ctx.codebooks.encode(frames, use_layers=min(4, ctx.codebooks.layers))
    record = PairedRecord(
        kind=PairKind.SPEECH_TRANSCRIPT,
        direction=_direction(entry, rng, 0.5),
        text=entry.text,
        speech=codes,
    )
    return render_pretrain(record, ctx.stage, ctx.layout, ctx.codec, ctx.templates)


def tokenize_corpus(
    entries: Iterable[ManifestEntry],
    ctx: TokenizerContext,
    filter_config: FilterConfig | None = FilterConfig(),
) -> Iterator[tuple[SourceType, Sample, str]]:
    """Filter, tokenize, and render every manifest entry in order.

    Yields (source type, sample, entry id). Pass `filter_config=None` for
    pre-filtered manifests.
    """
    for index, entry in enumerate(entries):
        if filter_config is not None and not filter_entry(entry, filter_config).keep:
            continue
        rng = _entry_rng(ctx, index)
        if entry.kind is EntryKind.IMAGE_CAPTION:
            sample = _tokenize_image_caption(entry, ctx, rng)
        elif entry.kind is EntryKind.TEXT:
            sample = _tokenize_text(entry, ctx)
        elif entry.kind is EntryKind.INTERLEAVED_DOC:
            sample = _tokenize_interleaved(entry, ctx)
        elif entry.kind is EntryKind.VIDEO_CAPTION:
            sample = _tokenize_video(entry, ctx, rng)
        else:
            sample = _tokenize_speech(entry, ctx, rng)
        yield entry.source_type, sample, entry.id


@dataclass
class PackReport:
    batches: int = 0
    per_type_batches: dict[str, int] = field(default_factory=dict)
    per_type_tokens: dict[str, int] = field(default_factory=dict)
    samples: int = 0
    tokens: int = 0
    pad_tokens: int = 0
    shard_paths: list[str] = field(default_factory=list)

    @property
    def pad_fraction(self) -> float:
        total = self.tokens + self.pad_tokens
        return self.pad_tokens / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "batches": self.batches,
            "per_type_batches": dict(sorted(self.per_type_batches.items())),
            "per_type_tokens": dict(sorted(self.per_type_tokens.items())),
            "samples": self.samples,
            "tokens": self.tokens,
            "pad_tokens": self.pad_tokens,
            "pad_fraction": self.pad_fraction,
            "shards": list(self.shard_paths),
        }


def _fill_batch(queue: list[Sample], window: int) -> list[Sample]:
    taken = []
    used = 0
    while queue and used + len(queue[0]) <= window:
        sample = queue.pop(0)
        taken.append(sample)
        used += len(sample)
    return taken


def pack_shards(
    samples: Iterable[tuple[SourceType, Sample, str]],
    spec: MixSpec,
    layout: VocabLayout,
    out_dir: str,
    window: int = DEFAULT_WINDOW,
    num_batches: int | None = None,
    batches_per_shard: int = 64,
    supervision: str = "pretrain",
    seed: int | None = None,
) -> PackReport:
    """Schedule source types per batch, pack fixed windows, write shards.

    With `num_batches=None`, packing stops once the next scheduled type's
    queue is empty; with an explicit count, an exhausted nonzero-ratio
    queue raises ExhaustedSource.
    """
    queues: dict[SourceType, list[Sample]] = {t: [] for t in SOURCE_ORDER}
    for source, sample, entry_id in samples:
        if len(sample) > window:
            raise SampleTooLong(
                f"sample {entry_id} has {len(sample)} tokens > window {window}", index=-1
            )
        queues[source].append(sample)

    os.makedirs(out_dir, exist_ok=True)
    scheduler = MixScheduler(spec, seed=seed)
    report = PackReport()
    pending: list[PackedBatch] = []
    shard_index = 0

    def flush():
        nonlocal shard_index
        if not pending:
            return
        path = os.path.join(out_dir, f"shard-{shard_index:05d}.bin")
        shardio.write_shard(path, pending, layout)
        report.shard_paths.append(path)
        pending.clear()
        shard_index += 1

    produced = 0
    while True:
        if num_batches is not None and produced >= num_batches:
            break
        source = scheduler.peek()
        if not queues[source]:
            if num_batches is None:
                break
            raise ExhaustedSource(
                f"queue for {source.value} is empty at batch {produced}",
                source_type=source.value,
            )
        scheduler.next()
        group = _fill_batch(queues[source], window)
        sup = (
            PretrainAll()
            if supervision == "pretrain"
            else SftAssistantOnly(spans=tuple(tuple(s.supervised_spans) for s in group))
        )
        batch = pack(group, window=window, spec=sup, pad_id=layout.pad_id)[0]
        pending.append(batch)
        produced += 1
        report.batches += 1
        report.per_type_batches[source.value] = report.per_type_batches.get(source.value, 0) + 1
        non_pad = batch.pad_start
        report.per_type_tokens[source.value] = (
            report.per_type_tokens.get(source.value, 0) + non_pad
        )
        report.samples += batch.sample_count
        report.tokens += non_pad
        report.pad_tokens += window - non_pad
        if len(pending) >= batches_per_shard:
            flush()
    flush()
    return report


def validate_shards(
    paths: Sequence[str],
    layout: VocabLayout,
    alternating_speech: bool = False,
) -> dict:
    """Re-check structural invariants and grammar over every packed sample."""
    report = {
        "shards": 0,
        "batches": 0,
        "samples": 0,
        "violations": [],
        "errors": [],
    }
    for path in paths:
        try:
            data = shardio.read_shard(path, layout)
        except DataForgeError as exc:
            report["errors"].append({"shard": path, "error": str(exc)})
            continue
        report["shards"] += 1
        for rec_idx, batch in enumerate(data.batches):
            report["batches"] += 1
            issues = _check_batch_structure(batch, layout)
            for msg in issues:
                report["violations"].append(
                    {"shard": path, "record": rec_idx, "sample": None, "detail": msg}
                )
            for s_idx, sl in enumerate(batch.sample_slices()):
                report["samples"] += 1
                stream = batch.tokens[sl]
                for violation in validate_stream(
                    stream, layout, alternating_speech, position_base=sl.start
                ):
                    doc = violation.to_dict()
                    doc.update({"shard": path, "record": rec_idx, "sample": s_idx})
                    report["violations"].append(doc)
    report["ok"] = not report["violations"] and not report["errors"]
    return report


def _check_batch_structure(batch: PackedBatch, layout: VocabLayout) -> list[str]:
    issues = []
    if batch.pad_start < batch.window:
        tail = batch.tokens[batch.pad_start :]
        if not np.all(tail == layout.pad_id):
            issues.append("non-pad id in pad region")
    if np.any(batch.tokens[: batch.pad_start] == layout.pad_id):
        issues.append("pad id inside a sample")
    if np.any(batch.loss_mask[batch.pad_start :]):
        issues.append("loss mask set on pad")
    return issues


def shard_stats(paths: Sequence[str], layout: VocabLayout) -> dict:
    """Aggregate token-class composition and pad fraction across shards."""
    counts = {"text": 0, "speech": 0, "image": 0, "special": 0, "pad": 0}
    batches = 0
    samples = 0
    for path in paths:
        data = shardio.read_shard(path, layout)
        for batch in data.batches:
            batches += 1
            samples += batch.sample_count
            body = batch.tokens[: batch.pad_start]
            counts["pad"] += batch.window - batch.pad_start
            counts["text"] += int(np.sum(body < layout.text_size))
            counts["speech"] += int(
                np.sum((body >= layout.speech_base) & (body < layout.image_base))
            )
            counts["image"] += int(np.sum((body >= layout.image_base) & (body < layout.special_base)))
            counts["special"] += int(np.sum(body >= layout.special_base))
    total = sum(counts.values())
    return {
        "shards": len(paths),
        "batches": batches,
        "samples": samples,
        "token_counts": counts,
        "pad_fraction": counts["pad"] / total if total else 0.0,
    }


def detokenize_tokens(
    tokens: Sequence[int],
    layout: VocabLayout,
    codec: ByteTextCodec,
    codebooks: RvqCodebooks | None = None,
) -> list[dict]:
    """Token-level inverse mapping: split a stream back into typed segments.

    Speech segments include decoded frames when codebooks are supplied.
    """
    segments: list[dict] = []
    text_buf: list[int] = []
    i = 0

    def flush_text():
        if text_buf:
            segments.append({"type": "text", "text": codec.decode(text_buf)})
            text_buf.clear()

    n = len(tokens)
    while i < n:
        tid = int(tokens[i])
        if tid == layout.image_open_id:
            flush_text()
            j = i + 1
            while j < n and int(tokens[j]) != layout.image_close_id:
                j += 1
            if j >= n:
                raise InvalidInput(f"unclosed image block at position {i}")
            block = [int(t) for t in tokens[i : j + 1]]
            segments.append({"type": "image", "codes": list(parse_image(block, layout).codes)})
            i = j + 1
        elif tid == layout.speech_open_id:
            flush_text()
            j = i + 1
            while j < n and int(tokens[j]) != layout.speech_close_id:
                j += 1
            if j >= n:
                raise InvalidInput(f"unclosed speech block at position {i}")
            block = [int(t) for t in tokens[i : j + 1]]
            codes, mode = parse_speech(block, layout)
            doc = {
                "type": "speech",
                "mode": mode.value,
                "codes": codes.codes.tolist(),
            }
            if codebooks is not None:
                doc["frames"] = codebooks.decode(codes).tolist()
            segments.append(doc)
            i = j + 1
        elif tid < layout.text_size:
            text_buf.append(tid)
            i += 1
        else:
            raise InvalidInput(f"unexpected token id {tid} at position {i}")
    flush_text()
    return segments
