"""Shared sample representation: a flat token stream with segment annotations."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Segment:
    """Half-open token span [start, end) of one modality within a sample."""

    kind: str  # "text" | "image" | "speech" | "marker"
    start: int
    end: int


@dataclass
class Sample:
    """Ordered modality segments flattened into one token stream.

    `supervised_spans` are half-open spans (relative to the sample) that
    carry loss under assistant-only supervision; empty means the sample
    has no supervised positions in that regime.
    """

    tokens: list[int]
    segments: list[Segment] = field(default_factory=list)
    supervised_spans: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "segments": [[s.kind, s.start, s.end] for s in self.segments],
            "spans": [list(sp) for sp in self.supervised_spans],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Sample":
        return cls(
            tokens=list(doc["tokens"]),
            segments=[Segment(kind, a, b) for kind, a, b in doc.get("segments", [])],
            supervised_spans=[tuple(sp) for sp in doc.get("spans", [])],
        )


class SampleBuilder:
    """Appends typed segments and tracks offsets."""

    def __init__(self):
        self.tokens: list[int] = []
        self.segments: list[Segment] = []
        self.supervised_spans: list[tuple[int, int]] = []

    @property
    def position(self) -> int:
        return len(self.tokens)

    def add(self, kind: str, ids: list[int]) -> tuple[int, int]:
        start = len(self.tokens)
        self.tokens.extend(ids)
        end = len(self.tokens)
        if end > start:
            self.segments.append(Segment(kind, start, end))
        return start, end

    def supervise(self, start: int, end: int) -> None:
        if end > start:
            self.supervised_spans.append((start, end))

    def build(self) -> Sample:
        return Sample(
            tokens=self.tokens,
            segments=self.segments,
            supervised_spans=self.supervised_spans,
        )
