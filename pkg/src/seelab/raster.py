"""Core raster types: confidence masks, pixel trichotomy, boxes, MSKF files.

A :class:`GrayMask` is the universal currency of the engine — predictions,
fused masks, pseudo-labels, entropy maps and weight maps are all single
channel rasters of confidences in [0, 1], stored as float32 ``(H, W)``
arrays so that the on-disk MSKF format roundtrips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    FormatError,
    InvalidThresholds,
    NoForeground,
    RangeError,
)

MSKF_MAGIC = b"MSKF"

# Classification thresholds: confidences within this distance of 0/1 count
# as hard background/foreground; everything between is ambiguous.
DEFAULT_LO = 0.05
DEFAULT_HI = 0.95

# On-disk values may drift outside [0,1] by float serialization jitter only.
_LOAD_SLACK = 1e-6


class PixelClass(IntEnum):
    ZERO = 0
    ONE = 1
    AMBIGUOUS = 2


@dataclass(frozen=True, eq=False)
class GrayMask:
    """Immutable single-channel raster of confidences in [0, 1].

    ``values`` is a read-only float32 array of shape ``(height, width)``,
    row-major. Use :meth:`from_array` to build one from arbitrary numeric
    input with validation.
    """

    values: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, GrayMask):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __post_init__(self):
        v = self.values
        if not isinstance(v, np.ndarray) or v.ndim != 2 or v.dtype != np.float32:
            raise DimensionMismatch("GrayMask requires a float32 (H, W) array")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionMismatch(f"mask dimensions must be >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise RangeError("mask values must be finite and within [0, 1]")
        v.setflags(write=False)

    @classmethod
    def from_array(cls, arr, clip: bool = False) -> "GrayMask":
        """Build a mask from any numeric 2-D array.

        Args:
            arr: array-like of shape (H, W).
            clip: clamp values into [0, 1] instead of raising RangeError.
        """
        a = np.ascontiguousarray(arr, dtype=np.float32)
        if clip:
            a = np.clip(a, 0.0, 1.0)
        return cls(a)

    @classmethod
    def full(cls, width: int, height: int, value: float = 0.0) -> "GrayMask":
        return cls(np.full((height, width), value, dtype=np.float32))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def same_shape(self, other: "GrayMask") -> bool:
        return self.values.shape == other.values.shape


@dataclass(frozen=True)
class Box:
    """Half-open pixel box [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise DimensionMismatch(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, other: "Box") -> bool:
        return (
            self.x0 <= other.x0
            and self.y0 <= other.y0
            and self.x1 >= other.x1
            and self.y1 >= other.y1
        )


class AnnotationLabel(IntEnum):
    BACKGROUND = 0
    FOREGROUND = 1
    UNKNOWN = -1


@dataclass(frozen=True)
class SparseAnnotation:
    """Sparse point/scribble supervision: per-pixel fg/bg/unknown labels."""

    labels: np.ndarray  # int8 (H, W), values in AnnotationLabel

    def __post_init__(self):
        l = self.labels
        if not isinstance(l, np.ndarray) or l.ndim != 2 or l.dtype != np.int8:
            raise DimensionMismatch("SparseAnnotation requires an int8 (H, W) array")
        l.setflags(write=False)

    @classmethod
    def from_mask(cls, mask: GrayMask, lo: float = DEFAULT_LO, hi: float = DEFAULT_HI):
        """Interpret a confidence raster as labels via the pixel trichotomy.

        One pixels become foreground, Zero pixels background, ambiguous
        pixels unknown. This is the file convention for annotation rasters.
        """
        cls_map = classify_pixels(mask, lo, hi)
        labels = np.full(mask.shape, AnnotationLabel.UNKNOWN, dtype=np.int8)
        labels[cls_map == PixelClass.ONE] = AnnotationLabel.FOREGROUND
        labels[cls_map == PixelClass.ZERO] = AnnotationLabel.BACKGROUND
        return cls(labels)

    @property
    def num_labeled(self) -> int:
        return int(np.count_nonzero(self.labels != AnnotationLabel.UNKNOWN))


def classify_pixels(mask: GrayMask, lo: float = DEFAULT_LO, hi: float = DEFAULT_HI) -> np.ndarray:
    """Partition pixels into Zero (v <= lo), One (v >= hi) and Ambiguous.

    Returns an int8 array of PixelClass values, same shape as the mask.

    Raises:
        InvalidThresholds: unless 0 <= lo < hi <= 1.
    """
    if not (0.0 <= lo < hi <= 1.0):
        raise InvalidThresholds(f"need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")
    v = mask.values
    out = np.full(v.shape, PixelClass.AMBIGUOUS, dtype=np.int8)
    out[v <= lo] = PixelClass.ZERO
    out[v >= hi] = PixelClass.ONE
    return out


def min_bounding_box(mask: GrayMask, hi: float = DEFAULT_HI) -> Box:
    """Tightest box containing every pixel classified One at threshold hi.

    Raises:
        NoForeground: when no pixel reaches hi.
    """
    ys, xs = np.nonzero(mask.values >= hi)
    if ys.size == 0:
        raise NoForeground(f"no pixel reaches the One threshold {hi}")
    return Box(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def save_mask(mask: GrayMask, path) -> None:
    """Write a mask as an MSKF file (magic, u32 w/h/channels, f32 LE payload)."""
    payload = np.ascontiguousarray(mask.values, dtype="<f4").tobytes()
    header = MSKF_MAGIC + struct.pack("<III", mask.width, mask.height, 1)
    Path(path).write_bytes(header + payload)


def load_mask(path) -> GrayMask:
    """Read an MSKF file back into a GrayMask.

    Values outside [0,1] by at most 1e-6 (serialization jitter) are clamped;
    larger violations raise RangeError. Structural problems raise FormatError.
    """
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    if data[:4] != MSKF_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    width, height, channels = struct.unpack("<III", data[4:16])
    if channels != 1:
        raise FormatError(f"{path}: expected 1 channel for a mask, got {channels}")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: invalid dimensions {width}x{height}")
    expected = 16 + 4 * width * height
    if len(data) != expected:
        raise FormatError(f"{path}: payload size {len(data) - 16} != {4 * width * height}")
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(height, width)
    if not np.all(np.isfinite(values)):
        raise RangeError(f"{path}: non-finite values")
    lo, hi = float(values.min()), float(values.max())
    if lo < -_LOAD_SLACK or hi > 1.0 + _LOAD_SLACK:
        raise RangeError(f"{path}: values outside [0,1] (min={lo}, max={hi})")
    if lo < 0.0 or hi > 1.0:
        values = np.clip(values, 0.0, 1.0)
    return GrayMask(np.ascontiguousarray(values, dtype=np.float32))
