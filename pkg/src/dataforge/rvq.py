"""Residual vector quantizer over feature frames.

Stacked codebooks: layer 0 quantizes the raw frame, each later layer
quantizes the residual left by the layers before it, so reconstruction
error can only shrink as more layers are kept. Codebooks are fit with
EMA k-means (decay 0.99) and dead codes are reseeded from random
residuals. Row 0 of an encoded matrix is the content codebook; rows
1-3 are the timbre codebooks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, InvalidInput, OutOfRange

FRAME_RATE = 50
MAX_LAYERS = 8
EMA_DECAY = 0.99

_MAGIC = b"RVQ1"
_HEADER = struct.Struct("<4sIIII")


@dataclass
class SpeechCodes:
    """Per-layer code matrix for one utterance: codes[layer][frame]."""

    codes: np.ndarray
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int32)
        if self.codes.ndim != 2:
            raise InvalidInput("codes must be a 2-D [layers][frames] matrix")
        if self.codes.size and self.codes.min() < 0:
            raise OutOfRange("negative code")

    @property
    def layers(self) -> int:
        return self.codes.shape[0]

    @property
    def frames(self) -> int:
        return self.codes.shape[1]

    @property
    def duration_s(self) -> float:
        return self.frames / self.frame_rate

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpeechCodes):
            return NotImplemented
        return (
            self.frame_rate == other.frame_rate
            and self.codes.shape == other.codes.shape
            and bool(np.array_equal(self.codes, other.codes))
        )


def nearest_code(points: np.ndarray, centroids: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Index of the squared-distance-nearest centroid per point.

    Ties break to the lowest index. Chunked over points to bound the
    (chunk, K, D) broadcast.
    """
    points = np.asarray(points, dtype=np.float32)
    centroids = np.asarray(centroids, dtype=np.float32)
    if points.shape[1] != centroids.shape[1]:
        raise InvalidInput(
            f"dimension mismatch: frames have D={points.shape[1]}, codebook D={centroids.shape[1]}"
        )
    out = np.empty(points.shape[0], dtype=np.int32)
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        d2 = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = d2.argmin(axis=1)
    return out


def _kmeans_ema(
    data: np.ndarray, k: int, iters: int, rng: np.random.Generator, decay: float = EMA_DECAY
) -> np.ndarray:
    """Fit one k-entry codebook with EMA updates and dead-code reseeding."""
    n = data.shape[0]
    init = rng.choice(n, size=k, replace=False)
    centroids = data[init].astype(np.float32).copy()
    ema_count = np.ones(k, dtype=np.float64)
    ema_sum = centroids.astype(np.float64).copy()

    for _ in range(iters):
        assign = nearest_code(data, centroids)
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        sums = np.stack(
            [np.bincount(assign, weights=data[:, d], minlength=k) for d in range(data.shape[1])],
            axis=1,
        )
        ema_count = decay * ema_count + (1.0 - decay) * counts
        ema_sum = decay * ema_sum + (1.0 - decay) * sums
        live = counts >= 1.0
        centroids[live] = (ema_sum[live] / ema_count[live, None]).astype(np.float32)
        for idx in np.flatnonzero(~live):
            seed = data[rng.integers(n)]
            centroids[idx] = seed
            ema_count[idx] = 1.0
            ema_sum[idx] = seed.astype(np.float64)
    return centroids


@dataclass
class RvqCodebooks:
    """Trained codebook stack: centroids[layer][code] is a D-dim vector."""

    centroids: np.ndarray
    frame_rate: int = FRAME_RATE
    trained: bool = True

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float32)
        if self.centroids.ndim != 3:
            raise InvalidInput("centroids must have shape (layers, codebook_size, dim)")

    @property
    def layers(self) -> int:
        return self.centroids.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.centroids.shape[1]

    @property
    def dim(self) -> int:
        return self.centroids.shape[2]

    @classmethod
    def train(
        cls,
        frames: np.ndarray,
        layers: int,
        codebook_size: int,
        iters: int = 40,
        seed: int = 0,
        frame_rate: int = FRAME_RATE,
    ) -> "RvqCodebooks":
        """Fit `layers` codebooks, each on the residuals of the previous ones.

        Deterministic for fixed (frames, seed, config).
        """
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 2:
            raise InvalidInput("frames must be a 2-D (T, D) array")
        if layers < 1:
            raise InvalidInput("layer count must be >= 1")
        if layers > MAX_LAYERS:
            raise InvalidInput(f"layer count {layers} exceeds the {MAX_LAYERS}-layer stack")
        if frames.shape[0] < codebook_size:
            raise InsufficientData(
                f"{frames.shape[0]} frames < codebook size {codebook_size}"
            )
        rng = np.random.default_rng(seed)
        residual = frames.copy()
        stack = np.empty((layers, codebook_size, frames.shape[1]), dtype=np.float32)
        for layer in range(layers):
            stack[layer] = _kmeans_ema(residual, codebook_size, iters, rng)
            assign = nearest_code(residual, stack[layer])
            residual -= stack[layer][assign]
        return cls(centroids=stack, frame_rate=frame_rate, trained=True)

    def encode(self, frames: np.ndarray, use_layers: int | None = None) -> SpeechCodes:
        """Quantize frames layer by layer; codes[l][t] indexes layer l's codebook."""
        if not self.trained:
            raise InvalidInput("codebooks are not trained")
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 2:
            raise InvalidInput("frames must be a 2-D (T, D) array")
        if frames.shape[1] != self.dim:
            raise InvalidInput(f"dimension mismatch: frames D={frames.shape[1]}, codebooks D={self.dim}")
        use = self.layers if use_layers is None else use_layers
        if not 1 <= use <= self.layers:
            raise InvalidInput(f"use_layers {use} not in [1, {self.layers}]")
        codes = np.empty((use, frames.shape[0]), dtype=np.int32)
        residual = frames.copy()
        for layer in range(use):
            idx = nearest_code(residual, self.centroids[layer])
            codes[layer] = idx
            residual -= self.centroids[layer][idx]
        return SpeechCodes(codes=codes, frame_rate=self.frame_rate)

    def decode(self, codes: SpeechCodes) -> np.ndarray:
        """Reconstruct frames as the sum of the selected centroids per layer."""
        if codes.layers > self.layers:
            raise InvalidInput(f"codes use {codes.layers} layers, codebooks have {self.layers}")
        if codes.codes.size and codes.codes.max() >= self.codebook_size:
            raise OutOfRange(f"code >= codebook size {self.codebook_size}")
        frames = np.zeros((codes.frames, self.dim), dtype=np.float32)
        for layer in range(codes.layers):
            frames += self.centroids[layer][codes.codes[layer]]
        return frames

    def save(self, path: str) -> None:
        """Binary layout: "RVQ1", L, K, D, frame_rate (all LE u32), then
        centroids as LE float32, layer-major."""
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, self.layers, self.codebook_size, self.dim, self.frame_rate))
            fh.write(self.centroids.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, path: str) -> "RvqCodebooks":
        with open(path, "rb") as fh:
            magic, layers, k, dim, frame_rate = _HEADER.unpack(fh.read(_HEADER.size))
            if magic != _MAGIC:
                raise InvalidInput(f"bad magic {magic!r}, expected {_MAGIC!r}")
            raw = fh.read(layers * k * dim * 4)
        if len(raw) != layers * k * dim * 4:
            raise InvalidInput("truncated codebook file")
        cents = np.frombuffer(raw, dtype="<f4").reshape(layers, k, dim).astype(np.float32)
        return cls(centroids=cents, frame_rate=frame_rate, trained=True)


def reconstruction_mse(codebooks: RvqCodebooks, frames: np.ndarray, use_layers: int) -> float:
    recon = codebooks.decode(codebooks.encode(frames, use_layers))
    diff = np.asarray(frames, dtype=np.float64) - recon.astype(np.float64)
    return float((diff**2).mean())


def waveform_frames(
    waveform: np.ndarray,
    sample_rate: int,
    frame_rate: int = FRAME_RATE,
    bands: int = 8,
) -> np.ndarray:
    """Fixed-window energy-band features: (T, bands) at `frame_rate` frames/s.

    Each non-overlapping window of sample_rate/frame_rate samples is
    reduced to log1p mean power in `bands` equal rFFT bins. Desk-scale
    stand-in for a neural feature extractor; only the code structure
    downstream matters.
    """
    waveform = np.asarray(waveform, dtype=np.float32).ravel()
    if sample_rate < frame_rate:
        raise InvalidInput("sample_rate must be >= frame_rate")
    window = sample_rate // frame_rate
    n_frames = len(waveform) // window
    feats = np.zeros((n_frames, bands), dtype=np.float32)
    for t in range(n_frames):
        seg = waveform[t * window : (t + 1) * window]
        power = np.abs(np.fft.rfft(seg.astype(np.float64))) ** 2
        for b, chunk in enumerate(np.array_split(power, bands)):
            feats[t, b] = np.log1p(chunk.mean()) if chunk.size else 0.0
    return feats
