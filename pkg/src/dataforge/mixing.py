"""Deterministic staged data mixing.

Each training stage fixes an integer ratio of batches per source type
within a 16-batch period; the scheduler interleaves types so that every
aligned period window matches the ratios exactly. Interleaving uses a
largest-remainder rule rather than sampling, so the ratio claims are
exact and resumable. An optional seeded mode shuffles each period's
emissions without disturbing the per-window counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidSpec, InvalidState


class Stage(Enum):
    I = "I"
    II = "II"
    III = "III"


class SourceType(Enum):
    IMAGE_TEXT_PAIR = "image_text_pair"
    LANGUAGE_ONLY = "language_only"
    INTERLEAVED_PLUS_VIDEO = "interleaved_plus_video"
    SPEECH_TEXT = "speech_text"


SOURCE_ORDER = (
    SourceType.IMAGE_TEXT_PAIR,
    SourceType.LANGUAGE_ONLY,
    SourceType.INTERLEAVED_PLUS_VIDEO,
    SourceType.SPEECH_TEXT,
)

# Per-stage batch counts per period, in SOURCE_ORDER. Speech share runs
# 2/16 -> 6/16 -> 12/16 (12.5%, 37.5%, 75%).
STAGE_RATIOS: dict[Stage, tuple[int, int, int, int]] = {
    Stage.I: (12, 2, 0, 2),
    Stage.II: (2, 2, 6, 6),
    Stage.III: (2, 1, 1, 12),
}


@dataclass(frozen=True)
class MixSpec:
    """Non-negative batch counts per source type within one period."""

    ratios: tuple[int, int, int, int]

    def __post_init__(self):
        if len(self.ratios) != len(SOURCE_ORDER):
            raise InvalidSpec(f"need {len(SOURCE_ORDER)} ratios")
        if any(r < 0 or r != int(r) for r in self.ratios):
            raise InvalidSpec("ratios must be non-negative integers")
        if sum(self.ratios) < 1:
            raise InvalidSpec("at least one ratio must be positive")
        object.__setattr__(self, "ratios", tuple(int(r) for r in self.ratios))

    @property
    def period(self) -> int:
        return sum(self.ratios)

    def ratio_of(self, source: SourceType) -> int:
        return self.ratios[SOURCE_ORDER.index(source)]

    @classmethod
    def for_stage(cls, stage: Stage) -> "MixSpec":
        return cls(ratios=STAGE_RATIOS[stage])


def _pick(spec: MixSpec, step: int, counts: list[int]) -> int:
    """Largest-remainder choice at 0-based `step`; ties go to source order."""
    period = spec.period
    best, best_err = 0, None
    for k, ratio in enumerate(spec.ratios):
        err = ratio * (step + 1) / period - counts[k]
        if best_err is None or err > best_err + 1e-12:
            best, best_err = k, err
    return best


def plan(spec: MixSpec, n: int) -> list[SourceType]:
    """The first `n` emissions of the canonical (unshuffled) schedule."""
    if n < 0:
        raise InvalidSpec("n must be >= 0")
    counts = [0] * len(SOURCE_ORDER)
    out = []
    for step in range(n):
        k = _pick(spec, step, counts)
        counts[k] += 1
        out.append(SOURCE_ORDER[k])
    return out


class MixScheduler:
    """Streaming, resumable equivalent of `plan`.

    With `seed=None`, `next()` iterated n times equals `plan(spec, n)`.
    With a seed, each period's block of emissions is shuffled by a
    per-period generator; aligned windows still match the ratios exactly.
    """

    def __init__(self, spec: MixSpec, seed: int | None = None):
        self.spec = spec
        self.seed = seed
        self.step = 0
        self.counts = [0] * len(SOURCE_ORDER)
        self._pending: list[int] = []

    def _ensure_block(self) -> None:
        if self._pending:
            return
        block = []
        counts = list(self.counts)
        for off in range(self.spec.period):
            j = _pick(self.spec, self.step + off, counts)
            counts[j] += 1
            block.append(j)
        rng = np.random.default_rng((self.seed, self.step // self.spec.period))
        rng.shuffle(block)
        self._pending = block

    def peek(self) -> SourceType:
        """The type `next()` would emit, without advancing."""
        if self.seed is None:
            return SOURCE_ORDER[_pick(self.spec, self.step, self.counts)]
        self._ensure_block()
        return SOURCE_ORDER[self._pending[0]]

    def next(self) -> SourceType:
        if self.seed is None:
            k = _pick(self.spec, self.step, self.counts)
        else:
            self._ensure_block()
            k = self._pending.pop(0)
        self.counts[k] += 1
        self.step += 1
        return SOURCE_ORDER[k]

    def to_json(self) -> str:
        return json.dumps(
            {
                "ratios": list(self.spec.ratios),
                "seed": self.seed,
                "step": self.step,
                "counts": list(self.counts),
                "pending": list(self._pending),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MixScheduler":
        try:
            doc = json.loads(text)
            spec = MixSpec(ratios=tuple(doc["ratios"]))
            sched = cls(spec, seed=doc["seed"])
            sched.step = int(doc["step"])
            sched.counts = [int(c) for c in doc["counts"]]
            sched._pending = [int(p) for p in doc["pending"]]
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise InvalidState(f"unreadable scheduler state: {exc}") from exc
        if sum(sched.counts) != sched.step:
            raise InvalidState("counts inconsistent with step counter")
        if sched.step < 0 or any(c < 0 for c in sched.counts):
            raise InvalidState("negative step or count")
        if sched.seed is None and sched._pending:
            raise InvalidState("pending block present without a seed")
        return sched
