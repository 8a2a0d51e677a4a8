"""Pseudo-label supervision: selection, weighting, losses, EMA teacher update.

Selection is image-level (strict uncertainty thresholds), weighting is
pixel-level (one minus the entropy map, zeroed when selection fails). Losses
reduce by the pixel mean so values are resolution independent, and use
natural log — the base-2 convention is reserved for uncertainty maps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .entropy import DEFAULT_THETA, entropy_map, u_abs, u_rel
from .errors import DimensionMismatch, FormatError, NoLabeledPixels, ShapeMismatch
from .pool import PoolEntry
from .raster import AnnotationLabel, GrayMask, SparseAnnotation

# Clamp for log arguments inside cross-entropy.
CE_EPS = 1e-7

PVEC_MAGIC = b"PVEC"


@dataclass(frozen=True)
class SelectionThresholds:
    tau_a: float = 0.1
    tau_r: float = 0.5

    def __post_init__(self):
        if self.tau_a <= 0 or self.tau_r <= 0:
            raise ValueError(f"thresholds must be > 0, got {self}")


def select(
    mask: GrayMask,
    thresholds: SelectionThresholds = SelectionThresholds(),
    theta: float = DEFAULT_THETA,
) -> bool:
    """Image-level indicator: keep the label only when both uncertainties are
    strictly below their thresholds. Infinite relative uncertainty always fails."""
    return u_abs(mask, theta) < thresholds.tau_a and u_rel(mask, theta) < thresholds.tau_r


def weight_map(
    mask: GrayMask,
    thresholds: SelectionThresholds = SelectionThresholds(),
    theta: float = DEFAULT_THETA,
) -> GrayMask:
    """Pixel weights (1 - entropy) gated by image-level selection."""
    if not select(mask, thresholds, theta):
        return GrayMask.from_array(np.zeros(mask.shape, dtype=np.float32))
    e = entropy_map(mask)
    return GrayMask.from_array(1.0 - e.values.astype(np.float64))


def _check_dims(*masks: GrayMask):
    shape = masks[0].shape
    for m in masks[1:]:
        if m.shape != shape:
            raise DimensionMismatch(f"{m.shape} vs {shape}")


def ce_loss(pred: GrayMask, target: GrayMask, weight: GrayMask) -> float:
    """Weighted binary cross entropy, mean over all pixels, natural log."""
    _check_dims(pred, target, weight)
    p = np.clip(pred.values.astype(np.float64), CE_EPS, 1.0 - CE_EPS)
    t = target.values.astype(np.float64)
    w = weight.values.astype(np.float64)
    per_pixel = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    return float(np.mean(w * per_pixel))


def ce_loss_grad(pred: GrayMask, target: GrayMask, weight: GrayMask) -> np.ndarray:
    """Closed-form gradient of ce_loss w.r.t. the prediction (per pixel).

    Zero where the prediction sits in the clamped range, matching the loss.
    """
    _check_dims(pred, target, weight)
    raw = pred.values.astype(np.float64)
    p = np.clip(raw, CE_EPS, 1.0 - CE_EPS)
    t = target.values.astype(np.float64)
    w = weight.values.astype(np.float64)
    grad = w * (p - t) / (p * (1.0 - p)) / p.size
    grad[(raw < CE_EPS) | (raw > 1.0 - CE_EPS)] = 0.0
    return grad


def iou_loss(pred: GrayMask, target: GrayMask, weight: GrayMask) -> float:
    """Weighted soft IoU loss: 1 - sum(w*p*t) / sum(w*(p + t - p*t)).

    An all-zero denominator (e.g. a fully rejected label) is defined as
    loss 0 so rejected labels contribute nothing.
    """
    _check_dims(pred, target, weight)
    p = pred.values.astype(np.float64)
    t = target.values.astype(np.float64)
    w = weight.values.astype(np.float64)
    inter = float(np.sum(w * p * t))
    union = float(np.sum(w * (p + t - p * t)))
    if union == 0.0:
        return 0.0
    return 1.0 - inter / union


def iou_loss_grad(pred: GrayMask, target: GrayMask, weight: GrayMask) -> np.ndarray:
    """Closed-form gradient of iou_loss w.r.t. the prediction (per pixel)."""
    _check_dims(pred, target, weight)
    p = pred.values.astype(np.float64)
    t = target.values.astype(np.float64)
    w = weight.values.astype(np.float64)
    inter = float(np.sum(w * p * t))
    union = float(np.sum(w * (p + t - p * t)))
    if union == 0.0:
        return np.zeros_like(p)
    d_inter = w * t
    d_union = w * (1.0 - t)
    return -(d_inter * union - inter * d_union) / (union * union)


def partial_ce(pred: GrayMask, ann: SparseAnnotation) -> float:
    """Cross entropy averaged over labeled pixels only.

    Raises:
        NoLabeledPixels: when the annotation labels nothing.
        DimensionMismatch: on shape disagreement.
    """
    if pred.shape != ann.labels.shape:
        raise DimensionMismatch(f"{pred.shape} vs {ann.labels.shape}")
    labeled = ann.labels != AnnotationLabel.UNKNOWN
    if not labeled.any():
        raise NoLabeledPixels("annotation has no labeled pixel")
    p = np.clip(pred.values.astype(np.float64)[labeled], CE_EPS, 1.0 - CE_EPS)
    t = (ann.labels[labeled] == AnnotationLabel.FOREGROUND).astype(np.float64)
    per_pixel = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    return float(np.mean(per_pixel))


def pseudo_label_loss(
    pred: GrayMask,
    pool_snapshot: tuple[PoolEntry, ...],
    thresholds: SelectionThresholds = SelectionThresholds(),
    theta: float = DEFAULT_THETA,
) -> float:
    """Sum over stored pseudo-labels of weighted (ce + iou) against pred.

    Rejected labels contribute 0 through their all-zero weight maps. The sum
    over entries is left unnormalized.
    """
    total = 0.0
    for entry in pool_snapshot:
        w = weight_map(entry.mask, thresholds, theta)
        total += ce_loss(pred, entry.mask, w) + iou_loss(pred, entry.mask, w)
    return total


def loss_weak(
    pred: GrayMask,
    pool_snapshot: tuple[PoolEntry, ...],
    ann: SparseAnnotation,
    thresholds: SelectionThresholds = SelectionThresholds(),
    theta: float = DEFAULT_THETA,
) -> float:
    """Weak-supervision loss: pseudo-label term plus partial cross entropy."""
    return pseudo_label_loss(pred, pool_snapshot, thresholds, theta) + partial_ce(pred, ann)


def loss_semi(
    pred: GrayMask,
    pool_snapshot: tuple[PoolEntry, ...],
    full_label: GrayMask | None,
    thresholds: SelectionThresholds = SelectionThresholds(),
    theta: float = DEFAULT_THETA,
) -> float:
    """Semi-supervision loss: pseudo-label term plus, when a dense label is
    available, unweighted ce + iou against it. Unlabeled images use the
    pseudo term alone."""
    total = pseudo_label_loss(pred, pool_snapshot, thresholds, theta)
    if full_label is not None:
        ones = GrayMask.from_array(np.ones(pred.shape, dtype=np.float32))
        total += ce_loss(pred, full_label, ones) + iou_loss(pred, full_label, ones)
    return total


@dataclass(frozen=True)
class ParamVector:
    """Ordered named flat arrays (teacher or student parameters), float64."""

    names: tuple[str, ...]
    arrays: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.names) != len(self.arrays):
            raise ShapeMismatch("names/arrays length mismatch")
        for a in self.arrays:
            if a.ndim != 1 or a.dtype != np.float64:
                raise ShapeMismatch("ParamVector arrays must be 1-D float64")
            a.setflags(write=False)

    @classmethod
    def build(cls, pairs: list[tuple[str, np.ndarray]]) -> "ParamVector":
        names = tuple(n for n, _ in pairs)
        arrays = tuple(np.ascontiguousarray(a, dtype=np.float64) for _, a in pairs)
        return cls(names, arrays)

    def compatible(self, other: "ParamVector") -> bool:
        return self.names == other.names and all(
            a.shape == b.shape for a, b in zip(self.arrays, other.arrays)
        )


def ema_update(teacher: ParamVector, student: ParamVector, eta: float = 0.996) -> ParamVector:
    """Elementwise convex combination eta * teacher + (1 - eta) * student.

    Raises:
        ShapeMismatch: when names, order or lengths differ.
    """
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must be in [0,1], got {eta}")
    if not teacher.compatible(student):
        raise ShapeMismatch("parameter vectors are not EMA-compatible")
    arrays = tuple(eta * t + (1.0 - eta) * s for t, s in zip(teacher.arrays, student.arrays))
    return ParamVector(teacher.names, arrays)


def save_pvec(pv: ParamVector, path) -> None:
    """Write the PVEC container (names + f32 LE payloads)."""
    chunks = [PVEC_MAGIC, struct.pack("<I", len(pv.names))]
    for name, arr in zip(pv.names, pv.arrays):
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.size))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_pvec(path) -> ParamVector:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != PVEC_MAGIC:
        raise FormatError(f"{path}: not a PVEC file")
    (count,) = struct.unpack("<I", data[4:8])
    off = 8
    pairs = []
    for _ in range(count):
        if off + 4 > len(data):
            raise FormatError(f"{path}: truncated name length")
        (nlen,) = struct.unpack("<I", data[off : off + 4])
        off += 4
        if off + nlen + 4 > len(data):
            raise FormatError(f"{path}: truncated entry")
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (alen,) = struct.unpack("<I", data[off : off + 4])
        off += 4
        if off + 4 * alen > len(data):
            raise FormatError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(data, dtype="<f4", count=alen, offset=off).astype(np.float64)
        off += 4 * alen
        pairs.append((name, arr))
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return ParamVector.build(pairs)
