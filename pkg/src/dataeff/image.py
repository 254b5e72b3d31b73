"""8-bit images, the binary PPM/PGM codec, LSB swapping and RandAugment-lite.

Every function here is pure: inputs are never modified and randomness is
always drawn from an explicitly seeded generator.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidBitCountError,
    MalformedHeaderError,
    TooFewImagesError,
    TruncatedPayloadError,
    UnsupportedMaxvalError,
)

__all__ = [
    "ImageU8",
    "AugmentationOp",
    "AugmentPolicy",
    "AUGMENT_KINDS",
    "MAGNITUDE_RANGES",
    "lsb_swap",
    "lsb_swap_corpus",
    "corpus_pairing",
    "apply_op",
    "apply_augment",
    "sample_ops",
    "decode_image",
    "encode_image",
    "read_image",
    "write_image",
    "to_input",
]


@dataclass(frozen=True)
class ImageU8:
    """Immutable 8-bit raster, row-major with interleaved channels."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self):
        if not (isinstance(self.width, int) and self.width > 0):
            raise ValueError(f"width must be a positive integer, got {self.width!r}")
        if not (isinstance(self.height, int) and self.height > 0):
            raise ValueError(f"height must be a positive integer, got {self.height!r}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels!r}")
        if not isinstance(self.data, bytes):
            object.__setattr__(self, "data", bytes(self.data))
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise DimensionMismatchError(
                f"data holds {len(self.data)} samples, expected {expected}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        """(height, width, channels)."""
        return (self.height, self.width, self.channels)

    def array(self) -> np.ndarray:
        """Read-only ``(height, width, channels)`` uint8 view of the samples."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.shape)

    @classmethod
    def from_array(cls, arr) -> "ImageU8":
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"expected a 2-D or 3-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValueError(f"samples must be integers, got {arr.dtype}")
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("samples must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        h, w, c = arr.shape
        return cls(width=int(w), height=int(h), channels=int(c),
                   data=np.ascontiguousarray(arr).tobytes())


def to_input(img: ImageU8) -> np.ndarray:
    """Flatten an image into a float64 feature vector scaled to [0, 1]."""
    return np.frombuffer(img.data, dtype=np.uint8).astype(np.float64) / 255.0


# --------------------------------------------------------------------------
# Codec
# --------------------------------------------------------------------------

_WHITESPACE = b" \t\n\r\v\f"


def _read_header_int(buf: bytes, pos: int, what: str) -> tuple[int, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch in _WHITESPACE:
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                break
            pos = end + 1
        else:
            break
    start = pos
    while pos < n and 48 <= buf[pos] <= 57:
        pos += 1
    if pos == start:
        raise MalformedHeaderError(f"expected {what} at byte {start}")
    return int(buf[start:pos]), pos


def decode_image(buf: bytes) -> ImageU8:
    """Decode binary PGM (P5) or PPM (P6) bytes with maxval 255."""
    buf = bytes(buf)
    magic = buf[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise MalformedHeaderError(f"unknown magic number {magic!r}")
    pos = 2
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE + b"#":
        raise MalformedHeaderError("magic number must be followed by whitespace")
    width, pos = _read_header_int(buf, pos, "width")
    height, pos = _read_header_int(buf, pos, "height")
    maxval, pos = _read_header_int(buf, pos, "maxval")
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"invalid dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise MalformedHeaderError(f"invalid maxval {maxval}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"only maxval 255 is supported, got {maxval}")
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise MalformedHeaderError("maxval must be followed by a single whitespace byte")
    pos += 1
    size = width * height * channels
    payload = buf[pos:pos + size]
    if len(payload) < size:
        raise TruncatedPayloadError(f"payload has {len(payload)} of {size} bytes")
    return ImageU8(width, height, channels, payload)


def encode_image(img: ImageU8) -> bytes:
    """Encode with the canonical header ``P5|P6 \\n W H \\n 255 \\n``."""
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + img.data


def read_image(path: str | os.PathLike) -> ImageU8:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_image(path: str | os.PathLike, img: ImageU8) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_image(img))


# --------------------------------------------------------------------------
# LSB swap
# --------------------------------------------------------------------------

def _low_mask(k: int) -> int:
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)):
        raise InvalidBitCountError(f"k must be an integer, got {k!r}")
    if not 0 <= k <= 8:
        raise InvalidBitCountError(f"k must lie in [0, 8], got {k}")
    return (1 << int(k)) - 1


def _check_same_shape(a: ImageU8, b: ImageU8) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")


def lsb_swap(a: ImageU8, b: ImageU8, k: int = 2) -> tuple[ImageU8, ImageU8]:
    """Exchange the ``k`` least significant bits of every sample of ``a`` and ``b``.

    Returns ``(a', b')`` where ``a'`` keeps the top ``8 - k`` bits of ``a`` and
    takes its bottom ``k`` bits from ``b`` (and symmetrically for ``b'``).
    """
    low = _low_mask(k)
    _check_same_shape(a, b)
    high = 0xFF ^ low
    xa = np.frombuffer(a.data, dtype=np.uint8)
    xb = np.frombuffer(b.data, dtype=np.uint8)
    out_a = (xa & high) | (xb & low)
    out_b = (xb & high) | (xa & low)
    return (dataclasses.replace(a, data=out_a.tobytes()),
            dataclasses.replace(b, data=out_b.tobytes()))


def corpus_pairing(n: int, seed: int, groups: Optional[Sequence] = None) -> np.ndarray:
    """Seeded partner assignment for corpus-level LSB swapping.

    Returns ``partner`` with ``partner[i] != i`` and ``partner`` a permutation,
    so every image donates its low bits exactly once.  Indices are shuffled and
    taken two at a time (mutual pairs); when a group has odd size its last
    three shuffled members form a 3-cycle instead.

    Args:
        n: corpus size.
        seed: pairing seed.
        groups: optional per-image keys (e.g. class labels); partners are then
            drawn only from the same group.
    """
    if n < 2:
        raise TooFewImagesError(f"need at least 2 images to pair, got {n}")
    rng = np.random.default_rng(seed)
    if groups is None:
        members = [np.arange(n)]
    else:
        if len(groups) != n:
            raise DimensionMismatchError(f"{len(groups)} group keys for {n} images")
        keys = sorted(set(groups), key=repr)
        members = [np.array([i for i in range(n) if groups[i] == key]) for key in keys]
    partner = np.empty(n, dtype=np.int64)
    for idx in members:
        if len(idx) < 2:
            raise TooFewImagesError("every pairing group needs at least 2 images")
        order = idx[rng.permutation(len(idx))]
        stop = len(order) - 3 if len(order) % 2 else len(order)
        for j in range(0, stop, 2):
            p, q = order[j], order[j + 1]
            partner[p], partner[q] = q, p
        if len(order) % 2:
            p, q, r = order[-3:]
            partner[p], partner[q], partner[r] = q, r, p
    return partner


def lsb_swap_corpus(images: Sequence[ImageU8], k: int = 2, pairing_seed: int = 0,
                    groups: Optional[Sequence] = None) -> list[ImageU8]:
    low = _low_mask(k)
    images = list(images)
    if len(images) < 2:
        raise TooFewImagesError(f"need at least 2 images, got {len(images)}")
    for img in images[1:]:
        _check_same_shape(images[0], img)
    partner = corpus_pairing(len(images), pairing_seed, groups)
    high = 0xFF ^ low
    stack = np.stack([np.frombuffer(img.data, dtype=np.uint8) for img in images])
    mixed = (stack & high) | (stack[partner] & low)
    return [dataclasses.replace(img, data=row.tobytes()) for img, row in zip(images, mixed)]


# --------------------------------------------------------------------------
# RandAugment-lite
# --------------------------------------------------------------------------

AUGMENT_KINDS = ("horizontal-flip", "rotate90", "brightness-shift", "contrast-scale", "translate")

# Inclusive magnitude range per kind.  Flip ignores its magnitude; rotate90
# counts signed quarter turns; brightness is in levels; contrast is a factor
# around the image mean; translate is a signed fraction of the axis length.
MAGNITUDE_RANGES = {
    "horizontal-flip": (-1.0, 1.0),
    "rotate90": (-3, 3),
    "brightness-shift": (-64.0, 64.0),
    "contrast-scale": (0.5, 1.5),
    "translate": (-0.25, 0.25),
}


@dataclass(frozen=True)
class AugmentationOp:
    kind: str
    magnitude: float = 0.0
    axis: int = 1  # translate only: 0 shifts rows, 1 shifts columns

    def __post_init__(self):
        if self.kind not in MAGNITUDE_RANGES:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        lo, hi = MAGNITUDE_RANGES[self.kind]
        if not lo <= self.magnitude <= hi:
            raise ValueError(f"{self.kind} magnitude {self.magnitude} outside [{lo}, {hi}]")
        if self.kind == "rotate90" and int(self.magnitude) != self.magnitude:
            raise ValueError("rotate90 magnitude must be a whole number of quarter turns")
        if self.axis not in (0, 1):
            raise ValueError(f"axis must be 0 or 1, got {self.axis}")


@dataclass(frozen=True)
class AugmentPolicy:
    """``ops_per_image`` random ops at strength ``magnitude`` in [0, 1]."""

    ops_per_image: int = 2
    magnitude: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if int(self.ops_per_image) != self.ops_per_image or self.ops_per_image < 0:
            raise ValueError(f"ops_per_image must be a non-negative integer, got {self.ops_per_image}")
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError(f"magnitude must lie in [0, 1], got {self.magnitude}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def apply_op(img: ImageU8, op: AugmentationOp) -> ImageU8:
    x = img.array()
    if op.kind == "horizontal-flip":
        out = x[:, ::-1, :]
    elif op.kind == "rotate90":
        turns = int(op.magnitude) % 4
        if img.width != img.height and turns % 2:
            # a quarter turn would change the dimensions of a non-square image
            turns = 2
        out = np.rot90(x, k=turns, axes=(0, 1))
    elif op.kind == "brightness-shift":
        shifted = x.astype(np.int16) + int(np.rint(op.magnitude))
        out = np.clip(shifted, 0, 255)
    elif op.kind == "contrast-scale":
        xf = x.astype(np.float64)
        mean = xf.mean()
        out = np.clip(np.rint(mean + op.magnitude * (xf - mean)), 0, 255)
    else:
        length = x.shape[op.axis]
        shift = int(np.rint(op.magnitude * length))
        out = np.zeros_like(x)
        if abs(shift) < length:
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            if shift >= 0:
                src[op.axis], dst[op.axis] = slice(0, length - shift), slice(shift, length)
            else:
                src[op.axis], dst[op.axis] = slice(-shift, length), slice(0, length + shift)
            out[tuple(dst)] = x[tuple(src)]
    return ImageU8.from_array(np.ascontiguousarray(out).astype(np.uint8))


def sample_ops(policy: AugmentPolicy) -> list[AugmentationOp]:
    """Draw the op sequence ``apply_augment`` would use for ``policy``."""
    rng = np.random.default_rng(policy.seed)
    level = policy.magnitude
    ops = []
    for _ in range(policy.ops_per_image):
        kind = AUGMENT_KINDS[int(rng.integers(len(AUGMENT_KINDS)))]
        sign = 1 if rng.integers(2) else -1
        axis = int(rng.integers(2))
        if kind == "horizontal-flip":
            magnitude = 0.0
        elif kind == "rotate90":
            magnitude = sign
        elif kind == "brightness-shift":
            magnitude = sign * level * 64.0
        elif kind == "contrast-scale":
            magnitude = 1.0 + sign * level * 0.5
        else:
            magnitude = sign * level * 0.25
        ops.append(AugmentationOp(kind, magnitude, axis))
    return ops


def apply_augment(img: ImageU8, policy: AugmentPolicy) -> ImageU8:
    for op in sample_ops(policy):
        img = apply_op(img, op)
    return img
