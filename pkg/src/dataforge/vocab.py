"""Unified token-id space over text, speech codes, image codes, and special tokens.

The id space is laid out as four contiguous, disjoint ranges:

    [0, text_size)                          text ids
    [text_size, +4096)                      speech codes, layer-major (4 layers x 1024)
    [text_size+4096, +8192)                 image codes
    [text_size+4096+8192, +4)               special tokens

so the extension beyond the base text vocabulary is exactly
4 * 1024 + 8192 + 4 = 12292 ids. A dedicated pad id sits one past the
extension (`pad_id == total_size`) and is never produced by `classify`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum

from .errors import InvalidConfiguration, OutOfRange

SPEECH_LAYERS = 4
SPEECH_CODEBOOK_SIZE = 1024
IMAGE_CODEBOOK_SIZE = 8192

IMAGE_OPEN = "<image>"
IMAGE_CLOSE = "</image>"
SPEECH_OPEN = "<spch>"
SPEECH_CLOSE = "</spch>"
SPECIAL_TOKENS = (IMAGE_OPEN, IMAGE_CLOSE, SPEECH_OPEN, SPEECH_CLOSE)

EXTENSION_SIZE = SPEECH_LAYERS * SPEECH_CODEBOOK_SIZE + IMAGE_CODEBOOK_SIZE + len(SPECIAL_TOKENS)


class TokenKind(Enum):
    TEXT = "text"
    SPEECH = "speech"
    IMAGE = "image"
    SPECIAL = "special"


@dataclass(frozen=True)
class TokenClass:
    """Classification of one token id: its kind plus the in-range code.

    For SPEECH tokens `layer` is the codebook layer in [0, 4) and `code`
    the index within that layer's codebook. For SPECIAL tokens `code`
    indexes SPECIAL_TOKENS. For TEXT, `code` is the raw text id.
    """

    kind: TokenKind
    layer: int = 0
    code: int = 0

    @staticmethod
    def text(code: int = 0) -> "TokenClass":
        return TokenClass(TokenKind.TEXT, 0, code)

    @staticmethod
    def speech(layer: int, code: int) -> "TokenClass":
        return TokenClass(TokenKind.SPEECH, layer, code)

    @staticmethod
    def image(code: int) -> "TokenClass":
        return TokenClass(TokenKind.IMAGE, 0, code)

    @staticmethod
    def special(name: str) -> "TokenClass":
        return TokenClass(TokenKind.SPECIAL, 0, SPECIAL_TOKENS.index(name))

    @property
    def special_name(self) -> str:
        if self.kind is not TokenKind.SPECIAL:
            raise ValueError("not a special token")
        return SPECIAL_TOKENS[self.code]


@dataclass(frozen=True)
class VocabLayout:
    """Immutable id layout; safe for unrestricted concurrent reads."""

    text_size: int
    speech_layers: int = SPEECH_LAYERS
    speech_codebook_size: int = SPEECH_CODEBOOK_SIZE
    image_codebook_size: int = IMAGE_CODEBOOK_SIZE

    def __post_init__(self):
        if self.text_size < 1:
            raise InvalidConfiguration("text_size must be >= 1")
        if self.speech_layers < 1 or self.speech_codebook_size < 1 or self.image_codebook_size < 1:
            raise InvalidConfiguration("codebook dimensions must be >= 1")

    @property
    def speech_base(self) -> int:
        return self.text_size

    @property
    def speech_size(self) -> int:
        return self.speech_layers * self.speech_codebook_size

    @property
    def image_base(self) -> int:
        return self.text_size + self.speech_size

    @property
    def special_base(self) -> int:
        return self.image_base + self.image_codebook_size

    @property
    def total_size(self) -> int:
        return self.special_base + len(SPECIAL_TOKENS)

    @property
    def extension_size(self) -> int:
        return self.total_size - self.text_size

    @property
    def pad_id(self) -> int:
        """Dedicated pad id, one past the extension; not part of the layout."""
        return self.total_size

    @property
    def image_open_id(self) -> int:
        return self.special_id(IMAGE_OPEN)

    @property
    def image_close_id(self) -> int:
        return self.special_id(IMAGE_CLOSE)

    @property
    def speech_open_id(self) -> int:
        return self.special_id(SPEECH_OPEN)

    @property
    def speech_close_id(self) -> int:
        return self.special_id(SPEECH_CLOSE)

    def speech_id(self, layer: int, code: int) -> int:
        if not 0 <= layer < self.speech_layers:
            raise OutOfRange(f"speech layer {layer} not in [0, {self.speech_layers})")
        if not 0 <= code < self.speech_codebook_size:
            raise OutOfRange(f"speech code {code} not in [0, {self.speech_codebook_size})")
        return self.speech_base + self.speech_codebook_size * layer + code

    def image_id(self, code: int) -> int:
        if not 0 <= code < self.image_codebook_size:
            raise OutOfRange(f"image code {code} not in [0, {self.image_codebook_size})")
        return self.image_base + code

    def special_id(self, name: str) -> int:
        if name not in SPECIAL_TOKENS:
            raise OutOfRange(f"unknown special token {name!r}")
        return self.special_base + SPECIAL_TOKENS.index(name)

    def encode(self, cls: TokenClass) -> int:
        """Map a token class with its code to the unified token id."""
        if cls.kind is TokenKind.TEXT:
            if not 0 <= cls.code < self.text_size:
                raise OutOfRange(f"text id {cls.code} not in [0, {self.text_size})")
            return cls.code
        if cls.kind is TokenKind.SPEECH:
            return self.speech_id(cls.layer, cls.code)
        if cls.kind is TokenKind.IMAGE:
            return self.image_id(cls.code)
        if not 0 <= cls.code < len(SPECIAL_TOKENS):
            raise OutOfRange(f"special index {cls.code} not in [0, {len(SPECIAL_TOKENS)})")
        return self.special_base + cls.code

    def classify(self, token_id: int) -> TokenClass:
        """Inverse of `encode`; total over [0, total_size)."""
        if not 0 <= token_id < self.total_size:
            raise OutOfRange(f"token id {token_id} not in [0, {self.total_size})")
        if token_id < self.text_size:
            return TokenClass(TokenKind.TEXT, 0, token_id)
        if token_id < self.image_base:
            off = token_id - self.speech_base
            return TokenClass(
                TokenKind.SPEECH, off // self.speech_codebook_size, off % self.speech_codebook_size
            )
        if token_id < self.special_base:
            return TokenClass(TokenKind.IMAGE, 0, token_id - self.image_base)
        return TokenClass(TokenKind.SPECIAL, 0, token_id - self.special_base)

    def to_json(self) -> str:
        doc = {
            "text_size": self.text_size,
            "speech_layers": self.speech_layers,
            "speech_codebook_size": self.speech_codebook_size,
            "image_codebook_size": self.image_codebook_size,
            "special_ids": {name: self.special_id(name) for name in SPECIAL_TOKENS},
            "total_size": self.total_size,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "VocabLayout":
        doc = json.loads(text)
        layout = cls(
            text_size=doc["text_size"],
            speech_layers=doc.get("speech_layers", SPEECH_LAYERS),
            speech_codebook_size=doc.get("speech_codebook_size", SPEECH_CODEBOOK_SIZE),
            image_codebook_size=doc.get("image_codebook_size", IMAGE_CODEBOOK_SIZE),
        )
        if doc.get("total_size", layout.total_size) != layout.total_size:
            raise InvalidConfiguration("total_size inconsistent with layout fields")
        specials = doc.get("special_ids", {})
        for name, tid in specials.items():
            if layout.special_id(name) != tid:
                raise InvalidConfiguration(f"special id mismatch for {name!r}")
        return layout

    def digest(self) -> bytes:
        """SHA-256 of the canonical JSON form; used for shard self-description."""
        return hashlib.sha256(self.to_json().encode("utf-8")).digest()


def build_layout(text_size: int) -> VocabLayout:
    """Build the standard layout over a base text vocabulary of `text_size` ids."""
    if text_size < 1:
        raise InvalidConfiguration("text_size must be >= 1")
    return VocabLayout(text_size=text_size)


# Desk-scale text vocabulary: raw bytes plus abstract chat-role markers, so
# the pipeline runs hermetically with no external tokenizer model.
SYSTEM_MARKER = "<|system|>"
USER_MARKER = "<|user|>"
ASSISTANT_MARKER = "<|assistant|>"
END_TURN_MARKER = "<|eot|>"
ROLE_MARKERS = (SYSTEM_MARKER, USER_MARKER, ASSISTANT_MARKER, END_TURN_MARKER)


class ByteTextCodec:
    """Byte-level text codec: ids 0..255 are raw bytes, then role markers."""

    def __init__(self):
        self._marker_ids = {name: 256 + i for i, name in enumerate(ROLE_MARKERS)}

    @property
    def text_size(self) -> int:
        return 256 + len(ROLE_MARKERS)

    def marker_id(self, name: str) -> int:
        return self._marker_ids[name]

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: list[int]) -> str:
        parts: list[str] = []
        buf = bytearray()
        for tid in ids:
            if tid < 256:
                buf.append(tid)
                continue
            if buf:
                parts.append(buf.decode("utf-8", errors="replace"))
                buf = bytearray()
            if tid - 256 < len(ROLE_MARKERS):
                parts.append(ROLE_MARKERS[tid - 256])
            else:
                raise OutOfRange(f"text id {tid} not in [0, {self.text_size})")
        if buf:
            parts.append(buf.decode("utf-8", errors="replace"))
        return "".join(parts)


def default_layout() -> VocabLayout:
    """Layout over the byte-level codec's 260-id text vocabulary."""
    return build_layout(ByteTextCodec().text_size)
