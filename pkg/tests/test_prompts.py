import math

import numpy as np
import pytest

from conftest import gaussian_blob
from seelab.errors import NoBackground, NoForeground
from seelab.prompts import (
    expand_box,
    extract_bg_points,
    extract_fg_points,
    extract_prompts,
    load_prompts,
    mask_prompt,
    nine_blocks,
    save_prompts,
)
from seelab.raster import Box, GrayMask, min_bounding_box


def brute_force_fg(mask_values, blocks, hi):
    """Reference implementation: scan every One pixel per block."""
    ys, xs = np.nonzero(mask_values >= hi)
    cands = list(zip(xs.tolist(), ys.tolist()))
    out = []
    for b in blocks:
        cx, cy = (b.x0 + b.x1 - 1) / 2, (b.y0 + b.y1 - 1) / 2
        inside = [(x, y) for x, y in cands if b.x0 <= x < b.x1 and b.y0 <= y < b.y1]
        pool = inside or cands
        best = min(pool, key=lambda p: ((p[0] - cx) ** 2 + (p[1] - cy) ** 2, p[1], p[0]))
        out.append(best)
    return out


def brute_force_bg(mask_values, blocks, lo, hi):
    """Reference: naive distance transform plus per-block farthest scan."""
    h, w = mask_values.shape
    ones = [(x, y) for y in range(h) for x in range(w) if mask_values[y, x] >= hi]
    zeros = [(x, y) for y in range(h) for x in range(w) if mask_values[y, x] <= lo]
    if not zeros:
        return None

    def dist2(p):
        if ones:
            return min((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 for q in ones)
        cx, cy = (w - 1) / 2, (h - 1) / 2
        return (p[0] - cx) ** 2 + (p[1] - cy) ** 2

    out = []
    for b in blocks:
        inside = [p for p in zeros if b.x0 <= p[0] < b.x1 and b.y0 <= p[1] < b.y1]
        pool = inside or zeros
        best = min(pool, key=lambda p: (-dist2(p), p[1], p[0]))
        out.append(best)
    return out


class TestNineBlocks:
    def test_exact_division(self):
        blocks = nine_blocks(Box(0, 0, 9, 9))
        assert len(blocks) == 9
        assert all(b.width == 3 and b.height == 3 for b in blocks)

    def test_floor_rule_widths(self):
        blocks = nine_blocks(Box(0, 0, 10, 10))
        widths = sorted({b.width for b in blocks})
        heights = sorted({b.height for b in blocks})
        assert widths == [3, 4] and heights == [3, 4]
        # cut positions follow floor(k * 10 / 3)
        assert sorted({b.x0 for b in blocks}) == [0, 3, 6]

    def test_degenerate_two_by_two(self):
        blocks = nine_blocks(Box(0, 0, 2, 2))
        assert len(blocks) == 4
        assert all(b.area == 1 for b in blocks)

    def test_disjoint_cover(self, rng):
        for _ in range(50):
            x0, y0 = rng.integers(0, 5, 2)
            w, h = rng.integers(1, 12, 2)
            box = Box(int(x0), int(y0), int(x0 + w), int(y0 + h))
            blocks = nine_blocks(box)
            canvas = np.zeros((box.y1 + 2, box.x1 + 2), dtype=int)
            for b in blocks:
                canvas[b.y0 : b.y1, b.x0 : b.x1] += 1
            inside = canvas[box.y0 : box.y1, box.x0 : box.x1]
            assert np.all(inside == 1)
            canvas[box.y0 : box.y1, box.x0 : box.x1] = 0
            assert np.all(canvas == 0)


class TestPointExtraction:
    def test_all_one_gives_block_centers(self):
        m = GrayMask.full(9, 9, 1.0)
        blocks = nine_blocks(Box(0, 0, 9, 9))
        pts = extract_fg_points(m, blocks)
        assert [(p.x, p.y) for p in pts] == [
            (1, 1), (4, 1), (7, 1),
            (1, 4), (4, 4), (7, 4),
            (1, 7), (4, 7), (7, 7),
        ]

    def test_single_pixel_everywhere(self):
        arr = np.zeros((9, 9), dtype=np.float32)
        arr[2, 6] = 1.0
        m = GrayMask.from_array(arr)
        pts = extract_fg_points(m, nine_blocks(Box(0, 0, 9, 9)))
        assert all((p.x, p.y) == (6, 2) for p in pts)

    def test_no_foreground(self):
        with pytest.raises(NoForeground):
            extract_fg_points(GrayMask.full(5, 5, 0.5), [Box(0, 0, 5, 5)])

    def test_corner_pixels_win_corner_blocks(self):
        arr = np.zeros((9, 9), dtype=np.float32)
        arr[4, 4] = 1.0
        m = GrayMask.from_array(arr)
        blocks = nine_blocks(Box(0, 0, 9, 9))
        pts = extract_bg_points(m, blocks)
        assert (pts[0].x, pts[0].y) == (0, 0)
        assert (pts[2].x, pts[2].y) == (8, 0)
        assert (pts[6].x, pts[6].y) == (0, 8)
        assert (pts[8].x, pts[8].y) == (8, 8)

    def test_no_background(self):
        with pytest.raises(NoBackground):
            extract_bg_points(GrayMask.full(4, 4, 1.0), [Box(0, 0, 4, 4)])

    def test_bg_fallback_outside_block(self):
        # block region fully ambiguous; Zero pixels exist only outside it
        arr = np.full((6, 6), 0.5, dtype=np.float32)
        arr[0, 0] = 0.0
        arr[3, 3] = 1.0
        m = GrayMask.from_array(arr)
        pts = extract_bg_points(m, [Box(2, 2, 5, 5)])
        assert (pts[0].x, pts[0].y) == (0, 0)

    def test_matches_brute_force_on_random_masks(self, rng):
        for _ in range(150):
            h = int(rng.integers(3, 33))
            w = int(rng.integers(3, 33))
            vals = rng.choice(
                np.array([0.0, 0.5, 1.0], dtype=np.float32),
                size=(h, w),
                p=[0.4, 0.3, 0.3],
            )
            m = GrayMask.from_array(vals)
            try:
                box = min_bounding_box(m)
            except NoForeground:
                continue
            blocks = nine_blocks(box)
            got_fg = [(p.x, p.y) for p in extract_fg_points(m, blocks)]
            assert got_fg == brute_force_fg(m.values, blocks, 0.95)
            expected_bg = brute_force_bg(m.values, blocks, 0.05, 0.95)
            if expected_bg is None:
                with pytest.raises(NoBackground):
                    extract_bg_points(m, blocks)
            else:
                got_bg = [(p.x, p.y) for p in extract_bg_points(m, blocks)]
                assert got_bg == expected_bg

    def test_points_lie_on_correct_classes(self, rng):
        m = gaussian_blob(27, sigma=5.0)
        box = min_bounding_box(m)
        blocks = nine_blocks(box)
        for p in extract_fg_points(m, blocks):
            assert m.values[p.y, p.x] >= 0.95
        for p in extract_bg_points(m, blocks):
            assert m.values[p.y, p.x] <= 0.05


class TestExpandBox:
    def test_binary_mask_unchanged(self, rng):
        for _ in range(50):
            arr = (rng.random((12, 12)) > 0.6).astype(np.float32)
            if not arr.any():
                continue
            m = GrayMask.from_array(arr)
            box = min_bounding_box(m)
            assert expand_box(m, box) == box

    def test_fully_ambiguous_flank_moves_one_block(self):
        arr = np.zeros((20, 20), dtype=np.float32)
        arr[5:14, 5:14] = 1.0  # 9x9 One block => box (5,5,14,14)
        arr[5:14, 5:8] = 0.5  # three leftmost blocks fully ambiguous
        m = GrayMask.from_array(arr)
        box = Box(5, 5, 14, 14)
        out = expand_box(m, box)
        assert out == Box(2, 5, 14, 14)

    def test_clamped_at_border(self):
        arr = np.zeros((9, 9), dtype=np.float32)
        arr[0:9, 0:9] = 1.0
        arr[:, 0:3] = 0.5
        arr[0, 0] = 1.0  # keep the box spanning the full width
        m = GrayMask.from_array(arr)
        box = min_bounding_box(m)
        out = expand_box(m, box)
        assert out.x0 == 0 and out.x1 <= 9

    def test_always_contains_input_and_fits_image(self, rng):
        for _ in range(100):
            h, w = int(rng.integers(4, 24)), int(rng.integers(4, 24))
            vals = rng.choice(
                np.array([0.0, 0.5, 1.0], dtype=np.float32), size=(h, w)
            )
            m = GrayMask.from_array(vals)
            try:
                box = min_bounding_box(m)
            except NoForeground:
                continue
            out = expand_box(m, box)
            assert out.contains(box)
            assert 0 <= out.x0 and out.x1 <= w and 0 <= out.y0 and out.y1 <= h


class TestMaskPrompt:
    def test_binary_fixed_point(self):
        arr = (np.arange(9).reshape(3, 3) % 2).astype(np.float32)
        m = GrayMask.from_array(arr)
        assert np.array_equal(mask_prompt(m).values, arr)

    def test_ambiguous_filtered(self):
        assert not mask_prompt(GrayMask.full(3, 3, 0.5)).values.any()

    def test_threshold_rule(self):
        m = GrayMask.from_array(np.array([[0.96, 0.94, 0.3]], dtype=np.float32))
        assert list(mask_prompt(m).values[0]) == [1.0, 0.0, 0.0]


class TestExtractPrompts:
    def test_blob_end_to_end(self):
        m = gaussian_blob(33, sigma=5.0)
        ps = extract_prompts(m)
        bbox = min_bounding_box(m)
        assert ps.box.contains(bbox)
        assert 1 <= len(ps.fg_points) <= 9
        assert 1 <= len(ps.bg_points) <= 9
        for p in ps.fg_points:
            assert m.values[p.y, p.x] >= 0.95
        for p in ps.bg_points:
            assert m.values[p.y, p.x] <= 0.05
        # background points gravitate to the far corners
        for p in ps.bg_points:
            d = math.hypot(p.x - 16, p.y - 16)
            assert d > 10
        assert np.array_equal(ps.mask_prompt.values, (m.values >= 0.95).astype(np.float32))

    def test_binary_disk_unchanged_box(self):
        from conftest import binary_disk

        m = binary_disk(32, radius=9)
        ps = extract_prompts(m)
        assert ps.box == min_bounding_box(m)
        assert np.array_equal(ps.mask_prompt.values, m.values)
        assert not ps.bg_missing

    def test_small_foreground_dedup(self):
        arr = np.zeros((16, 16), dtype=np.float32)
        arr[7:9, 7:9] = 1.0
        ps = extract_prompts(GrayMask.from_array(arr))
        assert len(ps.fg_points) <= 4
        assert len({(p.x, p.y) for p in ps.fg_points}) == len(ps.fg_points)

    def test_bg_missing_flag(self):
        arr = np.full((8, 8), 0.5, dtype=np.float32)
        arr[3:5, 3:5] = 1.0
        ps = extract_prompts(GrayMask.from_array(arr))
        assert ps.bg_missing and ps.bg_points == ()

    def test_deterministic(self):
        m = gaussian_blob(33, sigma=5.0)
        assert extract_prompts(m) == extract_prompts(m)

    def test_json_roundtrip(self, tmp_path):
        m = gaussian_blob(33, sigma=5.0)
        ps = extract_prompts(m)
        save_prompts(ps, tmp_path / "p.json", tmp_path / "p.mask.mskf")
        back = load_prompts(tmp_path / "p.json")
        assert back == ps
