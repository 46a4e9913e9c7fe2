"""Manifest ingestion and data-cleaning filters.

Manifests are JSON Lines, one entry per line. Quality scores (CLIP
alignment) arrive precomputed in the metadata; the filters only apply
thresholds. The pair rule keeps entries whose score is at or above the
threshold; the literal drop-if-above reading is available behind a flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

from .errors import InvalidEntry
from .mixing import SourceType


class EntryKind(Enum):
    IMAGE_CAPTION = "image_caption"
    TEXT = "text"
    INTERLEAVED_DOC = "interleaved_doc"
    VIDEO_CAPTION = "video_caption"
    SPEECH_TRANSCRIPT = "speech_transcript"


_KIND_TO_SOURCE = {
    EntryKind.IMAGE_CAPTION: SourceType.IMAGE_TEXT_PAIR,
    EntryKind.TEXT: SourceType.LANGUAGE_ONLY,
    EntryKind.INTERLEAVED_DOC: SourceType.INTERLEAVED_PLUS_VIDEO,
    EntryKind.VIDEO_CAPTION: SourceType.INTERLEAVED_PLUS_VIDEO,
    EntryKind.SPEECH_TRANSCRIPT: SourceType.SPEECH_TEXT,
}


@dataclass
class ManifestEntry:
    """One corpus item plus the metadata its filters need."""

    id: str
    kind: EntryKind
    text: str = ""
    paths: tuple[str, ...] = ()
    width: int | None = None
    height: int | None = None
    clip_score: float | None = None
    duration_s: float | None = None
    language: str | None = None
    direction: str | None = None  # "to_text" | "to_modality" | None (seeded coin)
    segments: tuple[dict, ...] = ()  # interleaved docs: ordered text/image parts
    sample_rate: int | None = None

    @property
    def source_type(self) -> SourceType:
        return _KIND_TO_SOURCE[self.kind]

    @classmethod
    def from_dict(cls, doc: dict) -> "ManifestEntry":
        try:
            kind = EntryKind(doc["kind"])
            entry_id = str(doc["id"])
        except (KeyError, ValueError) as exc:
            raise InvalidEntry(f"entry needs a valid id and kind: {exc}") from exc
        return cls(
            id=entry_id,
            kind=kind,
            text=doc.get("text", ""),
            paths=tuple(doc.get("paths", [])),
            width=doc.get("width"),
            height=doc.get("height"),
            clip_score=doc.get("clip_score"),
            duration_s=doc.get("duration_s"),
            language=doc.get("language"),
            direction=doc.get("direction"),
            segments=tuple(doc.get("segments", [])),
            sample_rate=doc.get("sample_rate"),
        )


def load_manifest(path: str) -> Iterator[ManifestEntry]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidEntry(f"line {lineno}: not valid JSON: {exc}") from exc
            yield ManifestEntry.from_dict(doc)


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds for the per-type cleaning rules."""

    pair_clip_threshold: float = 0.27
    doc_clip_threshold: float = 0.25
    max_aspect: float = 2.0
    min_side: int = 224
    max_speech_seconds: float = 15.0
    required_language: str = "en"
    # Literal reading of the pair rule: drop scores *above* the threshold.
    literal_pair_clip_rule: bool = False


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str | None = None


def _require(entry: ManifestEntry, *fields_needed: str) -> None:
    for name in fields_needed:
        if getattr(entry, name) is None:
            raise InvalidEntry(f"entry {entry.id}: {entry.kind.value} filter needs {name}")


def filter_entry(entry: ManifestEntry, config: FilterConfig = FilterConfig()) -> FilterDecision:
    """Apply the cleaning rules for the entry's type; pure and idempotent."""
    if entry.kind is EntryKind.IMAGE_CAPTION:
        _require(entry, "width", "height", "clip_score", "language")
        w, h = entry.width, entry.height
        if w < 1 or h < 1:
            raise InvalidEntry(f"entry {entry.id}: non-positive image dimensions")
        if max(w, h) / min(w, h) > config.max_aspect:
            return FilterDecision(False, f"aspect ratio {max(w, h) / min(w, h):.2f} > {config.max_aspect}")
        if min(w, h) < config.min_side:
            return FilterDecision(False, f"min side {min(w, h)} < {config.min_side}")
        if entry.language != config.required_language:
            return FilterDecision(False, f"language {entry.language!r}")
        if config.literal_pair_clip_rule:
            if entry.clip_score > config.pair_clip_threshold:
                return FilterDecision(False, f"clip score {entry.clip_score} > {config.pair_clip_threshold}")
        elif entry.clip_score < config.pair_clip_threshold:
            return FilterDecision(False, f"clip score {entry.clip_score} < {config.pair_clip_threshold}")
        return FilterDecision(True)
    if entry.kind is EntryKind.INTERLEAVED_DOC:
        _require(entry, "clip_score")
        if entry.clip_score < config.doc_clip_threshold:
            return FilterDecision(False, f"clip score {entry.clip_score} < {config.doc_clip_threshold}")
        return FilterDecision(True)
    if entry.kind is EntryKind.SPEECH_TRANSCRIPT:
        _require(entry, "duration_s")
        if entry.duration_s > config.max_speech_seconds:
            return FilterDecision(False, f"duration {entry.duration_s}s > {config.max_speech_seconds}s")
        return FilterDecision(True)
    # Video pairs are bounded by the frame policy at tokenization time;
    # language-only data arrives pre-cleaned.
    return FilterDecision(True)
