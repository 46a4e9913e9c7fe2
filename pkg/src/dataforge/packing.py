"""Masked sample packing into fixed-window batches.

Samples are concatenated along the sequence dimension until the window is
full; the attention rule then confines each position to its own sample's
causal prefix, so a pack behaves like independent sequences with no pad
between them. Pad appears only at pack tails. The mask is stored as the
sample-boundary table, never as a dense W x W matrix.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import InvalidInput, InvalidSpec, SampleTooLong
from .sample import Sample

DEFAULT_WINDOW = 2800


@dataclass(frozen=True)
class PretrainAll:
    """Supervise every non-pad position."""


@dataclass(frozen=True)
class SftAssistantOnly:
    """Supervise only the given per-sample half-open spans.

    `spans[i]` are the supervised spans of input sample i, relative to
    that sample's start. `spans=None` takes each Sample's own
    `supervised_spans`.
    """

    spans: tuple[tuple[tuple[int, int], ...], ...] | None = None


SupervisionSpec = Union[PretrainAll, SftAssistantOnly]


@dataclass
class PackedBatch:
    """One fixed-window pack: tokens, sample boundaries, and loss mask.

    `boundaries` is [0 = s0 < s1 < ... <= W]; sample i occupies
    [boundaries[i], boundaries[i+1]). Positions >= pad_start carry
    `pad_id` and never receive loss.
    """

    tokens: np.ndarray
    boundaries: tuple[int, ...]
    loss_mask: np.ndarray
    pad_id: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int32)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        self.boundaries = tuple(int(b) for b in self.boundaries)
        w = self.tokens.shape[0]
        if self.loss_mask.shape[0] != w:
            raise InvalidInput("loss mask length differs from window")
        if not self.boundaries or self.boundaries[0] != 0:
            raise InvalidInput("boundaries must start at 0")
        if any(b >= c for b, c in zip(self.boundaries, self.boundaries[1:])):
            raise InvalidInput("boundaries must be strictly increasing")
        if self.boundaries[-1] > w:
            raise InvalidInput("boundaries exceed the window")

    @property
    def window(self) -> int:
        return self.tokens.shape[0]

    @property
    def pad_start(self) -> int:
        return self.boundaries[-1]

    @property
    def sample_count(self) -> int:
        return len(self.boundaries) - 1

    def sample_slices(self) -> list[slice]:
        return [
            slice(self.boundaries[i], self.boundaries[i + 1]) for i in range(self.sample_count)
        ]

    def sample_of(self, pos: int) -> int | None:
        """Sample index owning position `pos`, or None for pad."""
        if pos >= self.pad_start:
            return None
        return bisect_right(self.boundaries, pos) - 1


def attention_allowed(batch: PackedBatch, i: int, j: int) -> bool:
    """True iff position i may attend to position j: both non-pad, same
    sample, and j <= i (causal). Precondition: 0 <= i, j < window."""
    if j > i:
        return False
    si = batch.sample_of(i)
    if si is None:
        return False
    return batch.sample_of(j) == si


def build_loss_mask(batch: PackedBatch, spec: SupervisionSpec) -> np.ndarray:
    """Loss mask for `batch` under `spec`; pad positions are always False.

    For SftAssistantOnly, `spec.spans` here must align with the batch's
    own samples (not the whole input stream).
    """
    mask = np.zeros(batch.window, dtype=bool)
    if isinstance(spec, PretrainAll):
        mask[: batch.pad_start] = True
        return mask
    if spec.spans is None:
        raise InvalidSpec("assistant-only supervision needs explicit spans at batch level")
    if len(spec.spans) != batch.sample_count:
        raise InvalidSpec(
            f"{len(spec.spans)} span lists for {batch.sample_count} samples"
        )
    for idx, spans in enumerate(spec.spans):
        start = batch.boundaries[idx]
        length = batch.boundaries[idx + 1] - start
        for a, b in spans:
            if not (0 <= a <= b <= length):
                raise InvalidSpec(f"span [{a}, {b}) outside sample {idx} of length {length}")
            mask[start + a : start + b] = True
    return mask


def _sample_tokens(sample) -> list[int]:
    if isinstance(sample, Sample):
        return sample.tokens
    return list(sample)


def _sample_spans(sample, explicit) -> tuple[tuple[int, int], ...]:
    if explicit is not None:
        return tuple((int(a), int(b)) for a, b in explicit)
    if isinstance(sample, Sample):
        return tuple((int(a), int(b)) for a, b in sample.supervised_spans)
    raise InvalidSpec("assistant-only supervision needs spans or Sample inputs")


def pack(
    samples: Sequence,
    window: int = DEFAULT_WINDOW,
    spec: SupervisionSpec = PretrainAll(),
    *,
    pad_id: int,
    best_fit: bool = False,
) -> list[PackedBatch]:
    """Pack samples into fixed-window batches.

    Default is greedy and order-preserving: samples are appended until the
    next would overflow, then the pack is closed with a padded tail.
    `best_fit=True` instead places each sample into the open pack with the
    least remaining room that fits (order across packs is not preserved).

    Raises SampleTooLong for any sample longer than the window.
    """
    per_sample: list[tuple[list[int], tuple[tuple[int, int], ...]]] = []
    explicit = spec.spans if isinstance(spec, SftAssistantOnly) else None
    if explicit is not None and len(explicit) != len(samples):
        raise InvalidSpec(f"{len(explicit)} span lists for {len(samples)} samples")
    for idx, sample in enumerate(samples):
        toks = _sample_tokens(sample)
        if not toks:
            raise InvalidInput(f"sample {idx} is empty")
        if len(toks) > window:
            raise SampleTooLong(
                f"sample {idx} has {len(toks)} tokens > window {window}", index=idx
            )
        if isinstance(spec, SftAssistantOnly):
            spans = _sample_spans(sample, explicit[idx] if explicit is not None else None)
        else:
            spans = ()
        per_sample.append((toks, spans))

    if best_fit:
        groups = _best_fit_groups(per_sample, window)
    else:
        groups = _greedy_groups(per_sample, window)

    batches = []
    for group in groups:
        batches.append(_close_pack(group, window, spec, pad_id))
    return batches


def _greedy_groups(per_sample, window):
    groups: list[list] = []
    current: list = []
    used = 0
    for item in per_sample:
        n = len(item[0])
        if used + n > window:
            groups.append(current)
            current, used = [], 0
        current.append(item)
        used += n
    if current:
        groups.append(current)
    return groups


def _best_fit_groups(per_sample, window):
    groups: list[list] = []
    room: list[int] = []
    for item in per_sample:
        n = len(item[0])
        best = -1
        for g, r in enumerate(room):
            if n <= r and (best < 0 or r < room[best]):
                best = g
        if best < 0:
            groups.append([item])
            room.append(window - n)
        else:
            groups[best].append(item)
            room[best] -= n
    return groups


def _close_pack(group, window, spec, pad_id) -> PackedBatch:
    tokens = np.full(window, pad_id, dtype=np.int32)
    boundaries = [0]
    pos = 0
    for toks, _ in group:
        tokens[pos : pos + len(toks)] = toks
        pos += len(toks)
        boundaries.append(pos)
    batch = PackedBatch(
        tokens=tokens,
        boundaries=tuple(boundaries),
        loss_mask=np.zeros(window, dtype=bool),
        pad_id=pad_id,
    )
    if isinstance(spec, PretrainAll):
        batch.loss_mask = build_loss_mask(batch, spec)
    else:
        batch.loss_mask = build_loss_mask(
            batch, SftAssistantOnly(spans=tuple(spans for _, spans in group))
        )
    return batch
