"""Shared tensor arithmetic, norms, clipping, seeded randomness, and tensor I/O.

Images are flat float64 vectors laid out in (row, column, channel) order with
all intensities in [0, 1]. Perturbations and intermediate iterates are plain
numpy arrays of the same length; they only become an Image again after
clipping back into the valid box.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

TENSOR_MAGIC = b"CWT1"
ZERO_NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Image:
    """A validated image: flat float64 intensities in [0, 1] plus its shape."""

    data: np.ndarray
    width: int
    height: int
    channels: int

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64).ravel())
        if self.width <= 0 or self.height <= 0 or self.channels <= 0:
            raise ValueError("image dimensions must be positive")
        if arr.size != self.width * self.height * self.channels:
            raise ValueError(
                f"data length {arr.size} does not match "
                f"{self.width}x{self.height}x{self.channels}"
            )
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("image intensities must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def like(self, values) -> "Image":
        """Wrap a raw vector of the same length in this image's shape."""
        return Image(np.asarray(values, dtype=np.float64), self.width, self.height, self.channels)


def as_vector(x) -> np.ndarray:
    """Flat float64 view of an Image or array-like."""
    if isinstance(x, Image):
        return x.data
    return np.asarray(x, dtype=np.float64).ravel()


def l2_distance(a, b) -> float:
    """Euclidean distance between two same-shape tensors."""
    va, vb = as_vector(a), as_vector(b)
    if va.shape != vb.shape:
        raise ValueError(f"shape mismatch: {va.shape} vs {vb.shape}")
    return float(np.sqrt(np.sum((va - vb) ** 2)))


def linf_distance(a, b) -> float:
    """Largest per-element absolute difference."""
    va, vb = as_vector(a), as_vector(b)
    if va.shape != vb.shape:
        raise ValueError(f"shape mismatch: {va.shape} vs {vb.shape}")
    if va.size == 0:
        return 0.0
    return float(np.max(np.abs(va - vb)))


def clip_to_ball(candidate, anchor: Image, eps: float) -> Image:
    """Clamp a candidate into the per-pixel eps box around `anchor`, then into [0, 1].

    Each element is clipped to [anchor_i - eps, anchor_i + eps] intersected
    with the valid intensity range. Idempotent; eps >= 1 degenerates to a
    plain [0, 1] clamp.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    v = as_vector(candidate)
    a = anchor.data
    if v.shape != a.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {a.shape}")
    lo = np.maximum(a - eps, 0.0)
    hi = np.minimum(a + eps, 1.0)
    return anchor.like(np.clip(v, lo, hi))


def gaussian_like(shape, s: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. N(0, s^2) draws with the given flat size or shape.

    s == 0 returns zeros without consuming any rng state, so zero-noise runs
    are stream-compatible with noise-free code paths.
    """
    if s < 0:
        raise ValueError("standard deviation must be nonnegative")
    if s == 0:
        return np.zeros(shape, dtype=np.float64)
    return rng.standard_normal(shape) * s


def unit_direction(z) -> np.ndarray:
    """z / ||z||_2, or the zero vector when ||z||_2 is below tolerance."""
    v = as_vector(z)
    n = float(np.sqrt(np.sum(v * v)))
    if n <= ZERO_NORM_TOL:
        return np.zeros_like(v)
    return v / n


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator for a 64-bit seed."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent child generator identified by (seed, *key) integers.

    The same (seed, key) tuple always yields the same stream, regardless of
    how many other children exist or in what order they are created.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


def save_tensor(path, image: Image) -> None:
    """Write an image in the project tensor format.

    Layout: magic "CWT1", three little-endian uint32 (width, height,
    channels), then width*height*channels little-endian float32 values in
    (row, column, channel) order.
    """
    header = struct.pack("<4sIII", TENSOR_MAGIC, image.width, image.height, image.channels)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.data.astype("<f4").tobytes())


def load_tensor(path) -> Image:
    """Read an image written by save_tensor."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise ValueError(f"{path}: truncated tensor header")
    magic, w, h, c = struct.unpack_from("<4sIII", blob, 0)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = 16 + 4 * w * h * c
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=16).astype(np.float64)
    return Image(values, w, h, c)
