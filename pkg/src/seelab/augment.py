"""Weak-augmentation algebra: sample, apply, invert and fuse mask views.

Every view is a combination of flip, right-angle rotation and scale
(36 combinations total). The composite order is fixed — flip, then rotate,
then scale — and the inverse applies the reverse order, so flip/rotation
views roundtrip exactly while scaling roundtrips through bilinear
resampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatch, EmptyInput
from .raster import Box, GrayMask

FLIPS = ("none", "h", "v")
ROTATIONS = (0, 90, 180, 270)
SCALES = (0.5, 1.0, 2.0)

# Fixed enumeration of all 36 combinations; index order is part of the
# sampler's determinism contract.
ALL_SPECS: tuple["AugSpec", ...]


@dataclass(frozen=True)
class AugSpec:
    """One flip/rotation/scale combination with an exact inverse."""

    flip: str = "none"
    rot: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.flip not in FLIPS or self.rot not in ROTATIONS or self.scale not in SCALES:
            raise ConfigError(f"invalid augmentation spec {self!r}")

    @property
    def is_identity(self) -> bool:
        return self.flip == "none" and self.rot == 0 and self.scale == 1.0

    @property
    def is_permutation(self) -> bool:
        """True when the view is an exact index permutation (no resampling)."""
        return self.scale == 1.0

    def to_json(self) -> dict:
        return {"flip": self.flip, "rot": self.rot, "scale": self.scale}

    @classmethod
    def from_json(cls, obj: dict) -> "AugSpec":
        return cls(flip=obj["flip"], rot=int(obj["rot"]), scale=float(obj["scale"]))

    def output_shape(self, height: int, width: int) -> tuple[int, int]:
        """Shape (H, W) of a view of an (height, width) input."""
        if self.rot in (90, 270):
            height, width = width, height
        return _scaled_dim(height, self.scale), _scaled_dim(width, self.scale)


ALL_SPECS = tuple(
    AugSpec(f, r, s) for f in FLIPS for r in ROTATIONS for s in SCALES
)


def identity_spec() -> AugSpec:
    return AugSpec()


def sample_augs(k: int, seed: int) -> list[AugSpec]:
    """Sample k augmentation specs, deterministic given seed.

    Slot 0 is always the identity view so the fused mask includes the
    untransformed prediction; slots 1..k-1 are drawn uniformly (with
    replacement) over all 36 combinations.
    """
    if k < 1:
        raise ConfigError(f"need k >= 1, got {k}")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(ALL_SPECS), size=k - 1)
    return [identity_spec()] + [ALL_SPECS[int(i)] for i in picks]


def _scaled_dim(dim: int, scale: float) -> int:
    return max(1, int(round(dim * scale)))


def _resize_bilinear(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-center sampling, float64 output."""
    in_h, in_w = a.shape
    if (in_h, in_w) == (out_h, out_w):
        return a.astype(np.float64)
    src = a.astype(np.float64)
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def apply_spec_array(a: np.ndarray, spec: AugSpec) -> np.ndarray:
    """Apply flip -> rotate -> scale to a raw (H, W) array."""
    out = np.asarray(a)
    if spec.flip == "h":
        out = out[:, ::-1]
    elif spec.flip == "v":
        out = out[::-1, :]
    if spec.rot:
        out = np.rot90(out, k=spec.rot // 90)
    if spec.scale != 1.0:
        out = _resize_bilinear(out, _scaled_dim(out.shape[0], spec.scale),
                               _scaled_dim(out.shape[1], spec.scale))
    return np.ascontiguousarray(out)


def invert_spec_array(a: np.ndarray, spec: AugSpec, target_h: int, target_w: int) -> np.ndarray:
    """Invert scale -> rotate -> flip back to (target_h, target_w)."""
    out = np.asarray(a)
    rot_h, rot_w = (target_w, target_h) if spec.rot in (90, 270) else (target_h, target_w)
    if spec.scale != 1.0:
        out = _resize_bilinear(out, rot_h, rot_w)
    elif out.shape != (rot_h, rot_w):
        raise DimensionMismatch(
            f"view shape {out.shape} inconsistent with spec {spec} on "
            f"{target_w}x{target_h} target"
        )
    if spec.rot:
        out = np.rot90(out, k=-(spec.rot // 90))
    if spec.flip == "h":
        out = out[:, ::-1]
    elif spec.flip == "v":
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def apply_spec(mask: GrayMask, spec: AugSpec) -> GrayMask:
    """Transform a mask into the view frame of a spec."""
    out = apply_spec_array(mask.values, spec)
    return GrayMask.from_array(out, clip=True)


def invert_spec(mask: GrayMask, spec: AugSpec, target_w: int, target_h: int) -> GrayMask:
    """Bring a view-frame mask back to the original (target_w, target_h) frame.

    Exact for flip/rotation-only specs; scaling is inverted by bilinear
    resampling.

    Raises:
        DimensionMismatch: when the mask shape is inconsistent with the spec
            applied to the target dimensions.
    """
    expected = spec.output_shape(target_h, target_w)
    if mask.values.shape != expected:
        raise DimensionMismatch(
            f"view shape {mask.values.shape} != expected {expected} for {spec}"
        )
    out = invert_spec_array(mask.values, spec, target_h, target_w)
    return GrayMask.from_array(out, clip=True)


def transform_point(x: int, y: int, spec: AugSpec, src_w: int, src_h: int) -> tuple[int, int]:
    """Map a pixel coordinate from the original frame into the view frame.

    Flips and rotations are exact index permutations; scaling rounds to the
    nearest view pixel under the same half-pixel-center convention used for
    raster resampling.
    """
    w, h = src_w, src_h
    if spec.flip == "h":
        x = w - 1 - x
    elif spec.flip == "v":
        y = h - 1 - y
    for _ in range(spec.rot // 90):
        # one 90-degree counter-clockwise step: (x, y) -> (y, w - 1 - x)
        x, y = y, w - 1 - x
        w, h = h, w
    if spec.scale != 1.0:
        out_w, out_h = _scaled_dim(w, spec.scale), _scaled_dim(h, spec.scale)
        x = int(np.clip(round((x + 0.5) * (out_w / w) - 0.5), 0, out_w - 1))
        y = int(np.clip(round((y + 0.5) * (out_h / h) - 0.5), 0, out_h - 1))
    return x, y


def transform_box(box: Box, spec: AugSpec, src_w: int, src_h: int) -> Box:
    """Map a half-open box from the original frame into the view frame."""
    w, h = src_w, src_h
    x0, y0, x1, y1 = box.x0, box.y0, box.x1, box.y1
    if spec.flip == "h":
        x0, x1 = w - x1, w - x0
    elif spec.flip == "v":
        y0, y1 = h - y1, h - y0
    for _ in range(spec.rot // 90):
        # counter-clockwise: new x spans the old y range, new y flips old x
        x0, y0, x1, y1 = y0, w - x1, y1, w - x0
        w, h = h, w
    if spec.scale != 1.0:
        out_w, out_h = _scaled_dim(w, spec.scale), _scaled_dim(h, spec.scale)
        sx, sy = out_w / w, out_h / h
        x0, x1 = int(round(x0 * sx)), int(round(x1 * sx))
        y0, y1 = int(round(y0 * sy)), int(round(y1 * sy))
        x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)
        x0, y0 = min(x0, out_w - 1), min(y0, out_h - 1)
        x1, y1 = min(x1, out_w), min(y1, out_h)
    return Box(x0, y0, x1, y1)


def fuse(masks: list[GrayMask]) -> GrayMask:
    """Per-pixel arithmetic mean of same-shaped masks.

    Raises:
        EmptyInput: on an empty list.
        DimensionMismatch: when shapes differ.
    """
    if not masks:
        raise EmptyInput("fuse requires at least one mask")
    shape = masks[0].shape
    for m in masks[1:]:
        if m.shape != shape:
            raise DimensionMismatch(f"mask shapes differ: {m.shape} vs {shape}")
    stack = np.stack([m.values.astype(np.float64) for m in masks])
    mean = np.clip(stack.mean(axis=0), 0.0, 1.0)
    return GrayMask.from_array(mean)
