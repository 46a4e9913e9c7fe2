"""Finite-state validation of modality-block structure over token streams.

The grammar accepts free text at top level, image blocks of exactly 32
codes, and speech blocks whose body is either content codes alone or the
codebook-major full pattern (content run, then three timbre runs of the
same length). `step` advances one token; `allowed_next` returns exactly
the token classes `step` would accept, which doubles as the logit-mask
oracle for constrained decoding. Frame-major speech bodies are only
accepted when the state is built with `alternating_speech=True`; that
flag swaps the speech sub-grammar rather than extending it, because the
two patterns share ambiguous prefixes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import DataForgeError, InvalidInput
from .visual import CODES_PER_IMAGE
from .vocab import (
    IMAGE_CLOSE,
    IMAGE_OPEN,
    SPEECH_CLOSE,
    SPEECH_OPEN,
    TokenClass,
    TokenKind,
    VocabLayout,
)

# Class keys name a whole family of interchangeable tokens: every text id
# behaves alike under the grammar, as does every code within one speech
# layer or the image codebook. Specials are singletons.
ClassKey = tuple
TEXT_KEY: ClassKey = ("text",)
IMAGE_CODE_KEY: ClassKey = ("image_code",)


def speech_key(layer: int) -> ClassKey:
    return ("speech_code", layer)


def special_key(name: str) -> ClassKey:
    return ("special", name)


def class_key(cls: TokenClass) -> ClassKey:
    if cls.kind is TokenKind.TEXT:
        return TEXT_KEY
    if cls.kind is TokenKind.IMAGE:
        return IMAGE_CODE_KEY
    if cls.kind is TokenKind.SPEECH:
        return speech_key(cls.layer)
    return special_key(cls.special_name)


class Mode(Enum):
    TOP = "top"
    IMAGE = "image"
    SPEECH_CONTENT = "speech_content"
    SPEECH_TIMBRE = "speech_timbre"
    SPEECH_ALT = "speech_alt"


@dataclass(frozen=True)
class GrammarState:
    """Immutable FSM state.

    `count` is codes consumed in the current image block / content run /
    frame-major body; `layer` and `frames` track the timbre run position
    once the content length is fixed.
    """

    mode: Mode = Mode.TOP
    count: int = 0
    layer: int = 0
    frames: int = 0
    alternating_speech: bool = False

    def describe(self) -> str:
        if self.mode is Mode.TOP:
            return "top-level"
        if self.mode is Mode.IMAGE:
            return f"image block ({self.count}/{CODES_PER_IMAGE} codes)"
        if self.mode is Mode.SPEECH_CONTENT:
            return f"speech content run ({self.count} codes)"
        if self.mode is Mode.SPEECH_TIMBRE:
            return f"speech timbre layer {self.layer} ({self.count}/{self.frames} codes)"
        return f"speech frame-major body (position {self.count})"


class GrammarViolation(DataForgeError):
    """A token not derivable from the current state.

    Carries the structured diagnostic: stream position (when known), the
    state description, the expected class keys, and the offending token.
    """

    def __init__(
        self,
        state: GrammarState,
        expected: frozenset,
        token_id: int,
        position: int | None = None,
    ):
        self.state = state
        self.expected = expected
        self.token_id = token_id
        self.position = position
        super().__init__(
            f"token {token_id} not allowed in {state.describe()}"
            + (f" at position {position}" if position is not None else "")
        )

    def to_dict(self) -> dict:
        return {
            "position": self.position,
            "state": self.state.describe(),
            "expected": sorted("/".join(str(p) for p in key) for key in self.expected),
            "token_id": self.token_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def allowed_next(state: GrammarState, layout: VocabLayout) -> frozenset:
    """Exactly the class keys `step` would accept from `state`."""
    if state.mode is Mode.TOP:
        return frozenset({TEXT_KEY, special_key(IMAGE_OPEN), special_key(SPEECH_OPEN)})
    if state.mode is Mode.IMAGE:
        if state.count < CODES_PER_IMAGE:
            return frozenset({IMAGE_CODE_KEY})
        return frozenset({special_key(IMAGE_CLOSE)})
    if state.mode is Mode.SPEECH_CONTENT:
        keys = {speech_key(0), special_key(SPEECH_CLOSE)}
        if state.count >= 1:
            keys.add(speech_key(1))
        return frozenset(keys)
    if state.mode is Mode.SPEECH_TIMBRE:
        if state.count < state.frames:
            return frozenset({speech_key(state.layer)})
        if state.layer < 3:
            return frozenset({speech_key(state.layer + 1)})
        return frozenset({special_key(SPEECH_CLOSE)})
    # frame-major body
    if state.count % 4 != 0:
        return frozenset({speech_key(state.count % 4)})
    return frozenset({speech_key(0), special_key(SPEECH_CLOSE)})


def step(
    state: GrammarState,
    token_id: int,
    layout: VocabLayout,
    position: int | None = None,
) -> GrammarState:
    """Advance the FSM by one token; raises GrammarViolation otherwise."""
    expected = allowed_next(state, layout)
    if not 0 <= token_id < layout.total_size:
        raise GrammarViolation(state, expected, token_id, position)
    key = class_key(layout.classify(token_id))
    if key not in expected:
        raise GrammarViolation(state, expected, token_id, position)

    if state.mode is Mode.TOP:
        if key == TEXT_KEY:
            return state
        if key == special_key(IMAGE_OPEN):
            return replace(state, mode=Mode.IMAGE, count=0, layer=0, frames=0)
        if state.alternating_speech:
            return replace(state, mode=Mode.SPEECH_ALT, count=0, layer=0, frames=0)
        return replace(state, mode=Mode.SPEECH_CONTENT, count=0, layer=0, frames=0)
    if state.mode is Mode.IMAGE:
        if key == IMAGE_CODE_KEY:
            return replace(state, count=state.count + 1)
        return replace(state, mode=Mode.TOP, count=0)
    if state.mode is Mode.SPEECH_CONTENT:
        if key == speech_key(0):
            return replace(state, count=state.count + 1)
        if key == speech_key(1):
            return replace(state, mode=Mode.SPEECH_TIMBRE, layer=1, count=1, frames=state.count)
        return replace(state, mode=Mode.TOP, count=0)
    if state.mode is Mode.SPEECH_TIMBRE:
        if key == special_key(SPEECH_CLOSE):
            return replace(state, mode=Mode.TOP, count=0, layer=0, frames=0)
        if key == speech_key(state.layer):
            return replace(state, count=state.count + 1)
        return replace(state, layer=state.layer + 1, count=1)
    # frame-major body
    if key == special_key(SPEECH_CLOSE):
        return replace(state, mode=Mode.TOP, count=0)
    return replace(state, count=state.count + 1)


def is_complete(state: GrammarState) -> bool:
    """True iff the stream may legally end here (no open block)."""
    return state.mode is Mode.TOP


def validate_stream(
    tokens,
    layout: VocabLayout,
    alternating_speech: bool = False,
    position_base: int = 0,
) -> list[GrammarViolation]:
    """Run the FSM over a whole stream; returns the violations found.

    After a violation inside a block the scan resynchronizes past that
    block's closing token, so each independent defect reports exactly one
    violation. A stream ending inside an open block is a violation at its
    final position.
    """
    tokens = [int(t) for t in tokens]
    state = GrammarState(alternating_speech=alternating_speech)
    violations: list[GrammarViolation] = []
    i = 0
    n = len(tokens)
    while i < n:
        try:
            state = step(state, tokens[i], layout, position=position_base + i)
        except GrammarViolation as violation:
            violations.append(violation)
            if state.mode is Mode.IMAGE:
                closer = layout.image_close_id
            elif state.mode is not Mode.TOP:
                closer = layout.speech_close_id
            else:
                closer = None
            state = GrammarState(alternating_speech=alternating_speech)
            if closer is not None:
                while i < n and tokens[i] != closer:
                    i += 1
        i += 1
    if not is_complete(state):
        violations.append(
            GrammarViolation(
                state, allowed_next(state, layout), -1, position=position_base + n - 1
            )
        )
    return violations


def allowed_token_mask(state: GrammarState, layout: VocabLayout) -> np.ndarray:
    """Boolean mask over [0, total_size): ids a sampler may emit next."""
    mask = np.zeros(layout.total_size, dtype=bool)
    for key in allowed_next(state, layout):
        if key == TEXT_KEY:
            mask[: layout.text_size] = True
        elif key == IMAGE_CODE_KEY:
            mask[layout.image_base : layout.image_base + layout.image_codebook_size] = True
        elif key[0] == "speech_code":
            base = layout.speech_base + key[1] * layout.speech_codebook_size
            mask[base : base + layout.speech_codebook_size] = True
        else:
            mask[layout.special_id(key[1])] = True
    return mask


@dataclass(frozen=True)
class DecodeConfig:
    """Per-modality decoding hyperparameters."""

    modality: str
    beam_size: int
    do_sampling: bool
    top_p: float | None
    repetition_penalty: float
    temperature: float
    guidance_scale: float


_DECODE_DEFAULTS = {
    "text": DecodeConfig("text", 5, False, None, 1.0, 1.0, 1.0),
    "image": DecodeConfig("image", 1, True, 0.7, 1.0, 1.0, 1.0),
    "speech": DecodeConfig("speech", 1, True, 0.7, 1.15, 1.0, 1.0),
    "video": DecodeConfig("video", 1, True, 0.7, 1.15, 1.0, 1.0),
}


def decode_config(modality: str) -> DecodeConfig:
    """Default decoding hyperparameters for an output modality."""
    key = modality.lower()
    if key not in _DECODE_DEFAULTS:
        raise InvalidInput(f"unknown output modality {modality!r}")
    return _DECODE_DEFAULTS[key]
