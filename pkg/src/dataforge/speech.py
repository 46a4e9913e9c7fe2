"""Wrapped speech token streams and their interleaving patterns.

A speech block is <spch> body </spch>. The body is either the content
codes alone (understanding drops the timbre codebooks), all four
codebooks codebook-major (content run a_1..a_T, then each timbre run),
or frame-major groups a_t b_t c_t d_t. The frame-major form exists for
ablation only; production generation emits the codebook-major form.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import InvalidInput, MalformedStream
from .rvq import FRAME_RATE, SpeechCodes
from .vocab import SPEECH_CLOSE, SPEECH_OPEN, TokenKind, VocabLayout

FULL_LAYERS = 4


class SpeechMode(Enum):
    CONTENT_ONLY = "content_only"
    FULL_SEQUENTIAL = "full_sequential"
    FULL_ALTERNATING = "full_alternating"


def serialize_speech(codes: SpeechCodes, mode: SpeechMode, layout: VocabLayout) -> list[int]:
    """Serialize codes into a wrapped token sequence under `mode`."""
    if mode is SpeechMode.CONTENT_ONLY:
        if codes.layers < 1:
            raise InvalidInput("content-only serialization needs at least 1 layer")
        body = [layout.speech_id(0, int(c)) for c in codes.codes[0]]
    else:
        if codes.layers != FULL_LAYERS:
            raise InvalidInput(
                f"full-mode serialization needs exactly {FULL_LAYERS} layers, got {codes.layers}"
            )
        if mode is SpeechMode.FULL_SEQUENTIAL:
            body = [
                layout.speech_id(layer, int(c))
                for layer in range(FULL_LAYERS)
                for c in codes.codes[layer]
            ]
        else:
            body = [
                layout.speech_id(layer, int(codes.codes[layer, t]))
                for t in range(codes.frames)
                for layer in range(FULL_LAYERS)
            ]
    return [layout.speech_open_id, *body, layout.speech_close_id]


def parse_speech(seq: list[int], layout: VocabLayout) -> tuple[SpeechCodes, SpeechMode]:
    """Exact inverse of `serialize_speech`, inferring the mode.

    All-content bodies parse as CONTENT_ONLY. Otherwise the body length
    must be 4T and the layer pattern must match a full mode. A body that
    matches both full patterns (only possible at T=1, where they emit
    identical tokens) parses as FULL_SEQUENTIAL.
    """
    if len(seq) < 2 or seq[0] != layout.speech_open_id:
        raise MalformedStream(f"stream must begin with {SPEECH_OPEN}", position=0)
    if seq[-1] != layout.speech_close_id:
        raise MalformedStream(f"stream must end with {SPEECH_CLOSE}", position=len(seq) - 1)

    layers: list[int] = []
    values: list[int] = []
    for i, tid in enumerate(seq[1:-1], start=1):
        cls = layout.classify(tid) if 0 <= tid < layout.total_size else None
        if cls is None or cls.kind is not TokenKind.SPEECH:
            raise MalformedStream(f"non-speech token id {tid} inside speech block", position=i)
        layers.append(cls.layer)
        values.append(cls.code)

    n = len(values)
    if all(layer == 0 for layer in layers):
        codes = np.asarray(values, dtype=np.int32).reshape(1, n)
        return SpeechCodes(codes=codes), SpeechMode.CONTENT_ONLY

    if n % FULL_LAYERS != 0:
        raise MalformedStream(
            f"body length {n} is not reconstructible under any full pattern",
            position=len(seq) - 1,
        )
    frames = n // FULL_LAYERS
    seq_bad = [i for i in range(n) if layers[i] != i // frames]
    alt_bad = [i for i in range(n) if layers[i] != i % FULL_LAYERS]
    if not seq_bad:
        mat = np.asarray(values, dtype=np.int32).reshape(FULL_LAYERS, frames)
        return SpeechCodes(codes=mat), SpeechMode.FULL_SEQUENTIAL
    if not alt_bad:
        mat = np.asarray(values, dtype=np.int32).reshape(frames, FULL_LAYERS).T.copy()
        return SpeechCodes(codes=mat), SpeechMode.FULL_ALTERNATING
    # Each candidate pattern dies at its own first mismatch; the stream is
    # provably malformed once both are dead.
    position = 1 + max(seq_bad[0], alt_bad[0])
    raise MalformedStream("layer pattern matches no interleaving mode", position=position)


def speech_token_count(duration_s: float, mode: SpeechMode, frame_rate: int = FRAME_RATE) -> int:
    """Serialized length (wrappers included) of an utterance of `duration_s`."""
    if duration_s < 0:
        raise InvalidInput("duration must be >= 0")
    frames = int(round(duration_s * frame_rate))
    if mode is SpeechMode.CONTENT_ONLY:
        return frames + 2
    return FULL_LAYERS * frames + 2
