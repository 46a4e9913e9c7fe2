"""Image token contract and video frame selection.

Every image becomes exactly 32 in-range codes wrapped in <image> ... </image>
(34 ids total). The default quantizer is a stub: nearest-neighbor resize to
224x224, mean-pool over a 4x8 grid, nearest centroid per cell. It honors the
token contract; it does not reproduce a neural tokenizer's causal semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfiguration, InvalidInput, NoFramesFit, OutOfRange
from .rvq import _kmeans_ema, nearest_code
from .vocab import IMAGE_CODEBOOK_SIZE, TokenKind, VocabLayout

CODES_PER_IMAGE = 32
GRID_ROWS = 4
GRID_COLS = 8
IMAGE_SIDE = 224
WRAPPED_IMAGE_LEN = CODES_PER_IMAGE + 2


@dataclass(frozen=True)
class ImageTokens:
    """Exactly 32 codes, each in [0, 8192)."""

    codes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "codes", tuple(int(c) for c in self.codes))
        if len(self.codes) != CODES_PER_IMAGE:
            raise InvalidInput(f"an image is {CODES_PER_IMAGE} codes, got {len(self.codes)}")
        for c in self.codes:
            if not 0 <= c < IMAGE_CODEBOOK_SIZE:
                raise OutOfRange(f"image code {c} not in [0, {IMAGE_CODEBOOK_SIZE})")


def resize_nearest(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Deterministic nearest-neighbor resize via integer index mapping."""
    h, w = image.shape
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return image[rows][:, cols]


def pool_grid(image: np.ndarray) -> np.ndarray:
    """Mean-pool a 224x224 view of `image` over the 4x8 grid -> (32, 1) floats."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2 or image.size == 0:
        raise InvalidInput("image must be a non-empty 2-D pixel grid")
    resized = resize_nearest(image, IMAGE_SIDE, IMAGE_SIDE)
    cell_h = IMAGE_SIDE // GRID_ROWS
    cell_w = IMAGE_SIDE // GRID_COLS
    feats = resized.reshape(GRID_ROWS, cell_h, GRID_COLS, cell_w).mean(axis=(1, 3))
    return feats.reshape(CODES_PER_IMAGE, 1)


class GridQuantizer:
    """Pluggable stub quantizer: grid pooling plus nearest-centroid lookup."""

    def __init__(self, centroids: np.ndarray):
        centroids = np.asarray(centroids, dtype=np.float32)
        if centroids.ndim == 1:
            centroids = centroids[:, None]
        if centroids.shape[0] < 1 or centroids.shape[0] > IMAGE_CODEBOOK_SIZE:
            raise InvalidConfiguration(
                f"codebook size must be in [1, {IMAGE_CODEBOOK_SIZE}]"
            )
        self.centroids = centroids

    @property
    def codebook_size(self) -> int:
        return self.centroids.shape[0]

    @classmethod
    def uniform(cls, k: int = IMAGE_CODEBOOK_SIZE, lo: float = 0.0, hi: float = 255.0) -> "GridQuantizer":
        """Evenly spaced intensity centroids; runs with no training data."""
        return cls(np.linspace(lo, hi, k, dtype=np.float32)[:, None])

    @classmethod
    def fit(cls, images: list[np.ndarray], k: int, iters: int = 25, seed: int = 0) -> "GridQuantizer":
        feats = np.concatenate([pool_grid(img) for img in images], axis=0)
        if feats.shape[0] < k:
            raise InvalidInput(f"{feats.shape[0]} pooled cells < codebook size {k}")
        rng = np.random.default_rng(seed)
        return cls(_kmeans_ema(feats.astype(np.float32), k, iters, rng))

    def quantize(self, image: np.ndarray) -> ImageTokens:
        feats = pool_grid(image)
        return ImageTokens(codes=tuple(int(i) for i in nearest_code(feats, self.centroids)))

    def save(self, path: str) -> None:
        np.save(path, self.centroids)

    @classmethod
    def load(cls, path: str) -> "GridQuantizer":
        return cls(np.load(path))


def quantize_image(image: np.ndarray, quantizer: GridQuantizer) -> ImageTokens:
    """Quantize one image into exactly 32 codes."""
    return quantizer.quantize(image)


def serialize_image(tokens: ImageTokens, layout: VocabLayout) -> list[int]:
    """<image> + 32 mapped ids + </image>; always 34 tokens."""
    return [layout.image_open_id, *(layout.image_id(c) for c in tokens.codes), layout.image_close_id]


def parse_image(seq: list[int], layout: VocabLayout) -> ImageTokens:
    """Inverse of `serialize_image`."""
    if len(seq) != WRAPPED_IMAGE_LEN:
        raise InvalidInput(f"a wrapped image is {WRAPPED_IMAGE_LEN} ids, got {len(seq)}")
    if seq[0] != layout.image_open_id or seq[-1] != layout.image_close_id:
        raise InvalidInput("missing image wrappers")
    codes = []
    for tid in seq[1:-1]:
        cls = layout.classify(tid)
        if cls.kind is not TokenKind.IMAGE:
            raise InvalidInput(f"non-image token id {tid} inside image block")
        codes.append(cls.code)
    return ImageTokens(codes=tuple(codes))


@dataclass(frozen=True)
class FramePolicy:
    """Video frame sampling constraints."""

    seconds_per_frame: float = 4.0
    min_frames: int = 4
    max_frames: int = 8
    scene_threshold: float = 0.3
    context_budget: int = 2800

    def __post_init__(self):
        if self.min_frames > self.max_frames:
            raise InvalidConfiguration("min_frames must be <= max_frames")
        if self.context_budget < WRAPPED_IMAGE_LEN:
            raise InvalidConfiguration(
                f"context budget must fit one wrapped image ({WRAPPED_IMAGE_LEN})"
            )
        if self.seconds_per_frame <= 0:
            raise InvalidConfiguration("seconds_per_frame must be positive")


def detect_scenes(frame_features, threshold: float = 0.3) -> list[int]:
    """Cut indices: i is a cut iff the normalized L1 distance between frame
    i and frame i-1 exceeds `threshold`."""
    feats = [np.asarray(f, dtype=np.float64).ravel() for f in frame_features]
    if not feats:
        raise InvalidInput("need at least one frame")
    cuts = []
    for i in range(1, len(feats)):
        if np.abs(feats[i] - feats[i - 1]).mean() > threshold:
            cuts.append(i)
    return cuts


def select_frames(
    duration_s: float,
    text_token_len: int,
    scene_cuts: list[float],
    policy: FramePolicy,
) -> list[float]:
    """Pick frame timestamps under duration, context-budget, and scene bounds.

    The frame count is the minimum of ceil(duration / seconds_per_frame),
    the number of wrapped images the remaining budget can hold, and (when
    cuts exist) the scene-segment count, clamped to [min_frames, max_frames].
    The budget bound is absolute and wins over the clamp. Timestamps are
    scene-segment midpoints when the count matches the segments, otherwise
    uniformly spaced midpoints.

    `scene_cuts` are cut times in seconds, strictly increasing in (0, duration).
    """
    if duration_s <= 0:
        raise InvalidInput("duration must be positive")
    available = policy.context_budget - text_token_len
    budget_bound = available // WRAPPED_IMAGE_LEN
    if budget_bound < 1:
        raise NoFramesFit(
            f"budget {available} cannot fit one wrapped image ({WRAPPED_IMAGE_LEN} tokens)"
        )
    for a, b in zip(scene_cuts, scene_cuts[1:]):
        if b <= a:
            raise InvalidInput("scene cuts must be strictly increasing")
    if scene_cuts and not (0 < scene_cuts[0] and scene_cuts[-1] < duration_s):
        raise InvalidInput("scene cuts must lie inside (0, duration)")

    n = min(math.ceil(duration_s / policy.seconds_per_frame), budget_bound)
    segments = len(scene_cuts) + 1
    if scene_cuts:
        n = min(n, segments)
    n = max(n, policy.min_frames)
    n = min(n, policy.max_frames)
    n = min(n, budget_bound)

    if scene_cuts and n == segments:
        bounds = [0.0, *scene_cuts, duration_s]
        return [(bounds[i] + bounds[i + 1]) / 2.0 for i in range(segments)]
    return [(k + 0.5) * duration_s / n for k in range(n)]
