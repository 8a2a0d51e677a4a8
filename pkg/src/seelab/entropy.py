"""Binary-entropy uncertainty maps and the three scalar uncertainty metrics.

The entropy map uses base 2 so that maximal uncertainty (confidence 0.5)
scores exactly 1.0; losses elsewhere in the engine use natural log, and the
two bases are never mixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .raster import GrayMask

# Eq. of the entropy map is undefined at exactly 0/1; confidences are clamped
# into [EPS, 1-EPS] first, which caps the error at ~2.5e-6.
EPS = 1e-7

DEFAULT_THETA = 0.9


@dataclass(frozen=True)
class UncertaintyScores:
    """Scalar uncertainty summary of a pseudo-label (lower is better).

    ``u_rel`` is ``math.inf`` when the mask has no confident foreground,
    which makes it lose every threshold comparison.
    """

    u_abs: float
    u_rel: float
    u_diff: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.u_abs, self.u_rel, self.u_diff)


def _entropy_values(v: np.ndarray) -> np.ndarray:
    p = np.clip(v.astype(np.float64), EPS, 1.0 - EPS)
    e = -(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p))
    return np.clip(e, 0.0, 1.0)


def entropy_map(mask: GrayMask) -> GrayMask:
    """Pixel-wise base-2 binary entropy of a confidence mask."""
    return GrayMask.from_array(_entropy_values(mask.values))


def high_uncertainty_mask(e: GrayMask, theta: float = DEFAULT_THETA) -> np.ndarray:
    """Boolean map of pixels whose entropy strictly exceeds theta."""
    return e.values > theta


def u_abs(mask: GrayMask, theta: float = DEFAULT_THETA) -> float:
    """Fraction of high-uncertainty pixels among all pixels."""
    e = _entropy_values(mask.values)
    return float(np.count_nonzero(e > theta)) / e.size


def u_rel(mask: GrayMask, theta: float = DEFAULT_THETA) -> float:
    """High-uncertainty pixel count over confident-foreground pixel count.

    Confident foreground means confidence > 0.5 with entropy <= theta.
    Returns ``math.inf`` when no such pixel exists, so that a mask without
    any confident foreground can never pass a selection threshold.
    """
    v = mask.values
    e = _entropy_values(v)
    numer = int(np.count_nonzero(e > theta))
    denom = int(np.count_nonzero((v > 0.5) & (e <= theta)))
    if denom == 0:
        return math.inf
    return numer / denom


def u_diff(pseudo: GrayMask, prev_pred: GrayMask, theta: float = DEFAULT_THETA) -> float:
    """High-uncertainty fraction of the residual |pseudo - prev_pred|.

    Measures how much of the pseudo-label disagrees ambiguously with the
    previous student prediction; residuals near 0 (already learned) and
    near 1 (clean complement) both score low.
    """
    if pseudo.shape != prev_pred.shape:
        raise DimensionMismatch(f"{pseudo.shape} vs {prev_pred.shape}")
    residual = np.abs(pseudo.values.astype(np.float64) - prev_pred.values.astype(np.float64))
    e = _entropy_values(residual)
    return float(np.count_nonzero(e > theta)) / e.size


def score_mask(candidate: GrayMask, prev_pred: GrayMask, theta: float = DEFAULT_THETA) -> UncertaintyScores:
    """All three uncertainty metrics of a candidate against a previous prediction."""
    if candidate.shape != prev_pred.shape:
        raise DimensionMismatch(f"{candidate.shape} vs {prev_pred.shape}")
    return UncertaintyScores(
        u_abs=u_abs(candidate, theta),
        u_rel=u_rel(candidate, theta),
        u_diff=u_diff(candidate, prev_pred, theta),
    )
