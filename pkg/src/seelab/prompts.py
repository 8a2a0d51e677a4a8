"""Multi-density prompt extraction from a fused coarse mask.

The bounding box of the hard foreground is split into a 3x3 block grid;
each block contributes one foreground point (the One pixel nearest the
block center) and one background point (the Zero pixel farthest from the
foreground). The box is then grown per direction by the ambiguous-pixel
proportion of the flanking blocks, and the mask prompt keeps only hard
foreground.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import NoBackground, NoForeground
from .raster import (
    DEFAULT_HI,
    DEFAULT_LO,
    Box,
    GrayMask,
    PixelClass,
    classify_pixels,
    min_bounding_box,
)


@dataclass(frozen=True)
class Point:
    x: int
    y: int
    polarity: str = "fg"  # "fg" | "bg"


@dataclass(frozen=True)
class PromptSet:
    """Point/box/mask prompt bundle extracted from one coarse mask.

    ``bg_missing`` flags the (legal) degenerate case of a mask without any
    hard background pixel; ``bg_points`` is then empty.
    """

    fg_points: tuple[Point, ...]
    bg_points: tuple[Point, ...]
    box: Box
    mask_prompt: GrayMask
    bg_missing: bool = False

    def to_json(self, mask_path: str) -> dict:
        return {
            "fg": [[p.x, p.y] for p in self.fg_points],
            "bg": [[p.x, p.y] for p in self.bg_points],
            "box": [self.box.x0, self.box.y0, self.box.x1, self.box.y1],
            "mask": mask_path,
            "bg_missing": self.bg_missing,
        }

    @classmethod
    def from_json(cls, obj: dict, mask_prompt: GrayMask) -> "PromptSet":
        return cls(
            fg_points=tuple(Point(int(x), int(y), "fg") for x, y in obj["fg"]),
            bg_points=tuple(Point(int(x), int(y), "bg") for x, y in obj["bg"]),
            box=Box(*(int(c) for c in obj["box"])),
            mask_prompt=mask_prompt,
            bg_missing=bool(obj.get("bg_missing", False)),
        )


def save_prompts(ps: PromptSet, json_path, mask_path) -> None:
    from .raster import save_mask

    save_mask(ps.mask_prompt, mask_path)
    Path(json_path).write_text(json.dumps(ps.to_json(str(mask_path)), sort_keys=True))


def load_prompts(json_path) -> PromptSet:
    from .raster import load_mask

    obj = json.loads(Path(json_path).read_text())
    return PromptSet.from_json(obj, load_mask(obj["mask"]))


def nine_blocks(box: Box) -> list[Box]:
    """3x3 partition of a box with cuts at floor(k * extent / 3).

    Blocks are returned row-major; blocks that collapse to zero extent
    (box thinner than 3 pixels in an axis) are omitted, so a degenerate box
    yields fewer than nine blocks. The returned blocks are disjoint and
    cover the box exactly.
    """
    xc = [box.x0 + (k * box.width) // 3 for k in range(4)]
    yc = [box.y0 + (k * box.height) // 3 for k in range(4)]
    blocks = []
    for r in range(3):
        for c in range(3):
            if xc[c] < xc[c + 1] and yc[r] < yc[r + 1]:
                blocks.append(Box(xc[c], yc[r], xc[c + 1], yc[r + 1]))
    return blocks


def _block_center(b: Box) -> tuple[float, float]:
    return ((b.x0 + b.x1 - 1) / 2.0, (b.y0 + b.y1 - 1) / 2.0)


def _pick_min(xs: np.ndarray, ys: np.ndarray, key: np.ndarray) -> tuple[int, int]:
    """Smallest-key candidate, ties broken row-major (y, then x)."""
    order = np.lexsort((xs, ys, key))
    i = order[0]
    return int(xs[i]), int(ys[i])


def extract_fg_points(
    mask: GrayMask, blocks: list[Box], hi: float = DEFAULT_HI
) -> list[Point]:
    """One foreground point per block: the One pixel nearest the block center.

    The search runs inside the block first and widens to the whole image when
    the block holds no One pixel.

    Raises:
        NoForeground: when the image has no One pixel at all.
    """
    ys_all, xs_all = np.nonzero(mask.values >= hi)
    if ys_all.size == 0:
        raise NoForeground("no One pixel available for foreground points")
    points = []
    for b in blocks:
        cx, cy = _block_center(b)
        inside = (xs_all >= b.x0) & (xs_all < b.x1) & (ys_all >= b.y0) & (ys_all < b.y1)
        xs, ys = (xs_all[inside], ys_all[inside]) if inside.any() else (xs_all, ys_all)
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        x, y = _pick_min(xs, ys, d2)
        points.append(Point(x, y, "fg"))
    return points


def extract_bg_points(
    mask: GrayMask, blocks: list[Box], lo: float = DEFAULT_LO, hi: float = DEFAULT_HI
) -> list[Point]:
    """One background point per block: the Zero pixel farthest from the foreground.

    Distance is the exact Euclidean distance transform of the One set; when
    the image has no One pixel, distance to the image center is used instead.
    The search prefers in-block candidates and falls back to the whole image.

    Raises:
        NoBackground: when the image has no Zero pixel at all.
    """
    v = mask.values
    zero = v <= lo
    if not zero.any():
        raise NoBackground("no Zero pixel available for background points")
    one = v >= hi
    h, w = v.shape
    if one.any():
        dist = distance_transform_edt(~one)
        # exact integer squared distances; keeps tie-breaks float-safe
        d2 = np.rint(dist * dist)
    else:
        cyx = ((h - 1) / 2.0, (w - 1) / 2.0)
        yy, xx = np.mgrid[0:h, 0:w]
        d2 = (xx - cyx[1]) ** 2 + (yy - cyx[0]) ** 2
    ys_all, xs_all = np.nonzero(zero)
    dist_all = d2[ys_all, xs_all]
    points = []
    for b in blocks:
        inside = (xs_all >= b.x0) & (xs_all < b.x1) & (ys_all >= b.y0) & (ys_all < b.y1)
        if inside.any():
            xs, ys, dd = xs_all[inside], ys_all[inside], dist_all[inside]
        else:
            xs, ys, dd = xs_all, ys_all, dist_all
        x, y = _pick_min(xs, ys, -dd)
        points.append(Point(x, y, "bg"))
    return points


def _round_half_away(z: float) -> int:
    return int(np.floor(z + 0.5)) if z >= 0 else -int(np.floor(-z + 0.5))


def expand_box(
    mask: GrayMask, box: Box, lo: float = DEFAULT_LO, hi: float = DEFAULT_HI
) -> Box:
    """Grow a bounding box outward by per-direction expansion coefficients.

    Each direction's coefficient is the ambiguous-pixel proportion within the
    three direction-most blocks of the 3x3 grid (i.e. the flanking column or
    row strip); the edge moves outward by round(coefficient * extent / 3),
    clamped to the image bounds. A fully binary mask leaves the box unchanged.
    """
    cls_map = classify_pixels(mask, lo, hi)
    ambiguous = cls_map == PixelClass.AMBIGUOUS
    xc = [box.x0 + (k * box.width) // 3 for k in range(4)]
    yc = [box.y0 + (k * box.height) // 3 for k in range(4)]

    def strip_coeff(x0, x1, y0, y1) -> float:
        area = (x1 - x0) * (y1 - y0)
        if area <= 0:
            return 0.0
        return float(np.count_nonzero(ambiguous[y0:y1, x0:x1])) / area

    ce_left = strip_coeff(xc[0], xc[1], box.y0, box.y1)
    ce_right = strip_coeff(xc[2], xc[3], box.y0, box.y1)
    ce_up = strip_coeff(box.x0, box.x1, yc[0], yc[1])
    ce_down = strip_coeff(box.x0, box.x1, yc[2], yc[3])

    bw, bh = box.width / 3.0, box.height / 3.0
    x0 = max(0, box.x0 - _round_half_away(ce_left * bw))
    x1 = min(mask.width, box.x1 + _round_half_away(ce_right * bw))
    y0 = max(0, box.y0 - _round_half_away(ce_up * bh))
    y1 = min(mask.height, box.y1 + _round_half_away(ce_down * bh))
    return Box(x0, y0, x1, y1)


def mask_prompt(mask: GrayMask, hi: float = DEFAULT_HI) -> GrayMask:
    """Binary prompt keeping only hard foreground: 1 where One, 0 elsewhere."""
    return GrayMask.from_array((mask.values >= hi).astype(np.float32))


def _dedup(points: list[Point]) -> tuple[Point, ...]:
    seen, out = set(), []
    for p in points:
        if (p.x, p.y) not in seen:
            seen.add((p.x, p.y))
            out.append(p)
    return tuple(out)


def extract_prompts(
    coarse: GrayMask, lo: float = DEFAULT_LO, hi: float = DEFAULT_HI
) -> PromptSet:
    """Full prompt bundle from a coarse mask.

    Composes bounding box -> nine blocks -> point extraction -> box expansion
    -> mask prompt. Repeated points are deduplicated keeping the first
    occurrence. A mask without hard background yields an empty background
    point list with ``bg_missing`` set rather than an error.

    Raises:
        NoForeground: when the coarse mask has no One pixel.
    """
    box = min_bounding_box(coarse, hi)
    blocks = nine_blocks(box)
    fg = _dedup(extract_fg_points(coarse, blocks, hi))
    try:
        bg = _dedup(extract_bg_points(coarse, blocks, lo, hi))
        bg_missing = False
    except NoBackground:
        bg = ()
        bg_missing = True
    expanded = expand_box(coarse, box, lo, hi)
    return PromptSet(
        fg_points=fg,
        bg_points=bg,
        box=expanded,
        mask_prompt=mask_prompt(coarse, hi),
        bg_missing=bg_missing,
    )
