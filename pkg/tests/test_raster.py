import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seelab.errors import (
    DimensionMismatch,
    FormatError,
    InvalidThresholds,
    NoForeground,
    RangeError,
)
from seelab.raster import (
    Box,
    GrayMask,
    PixelClass,
    SparseAnnotation,
    classify_pixels,
    load_mask,
    min_bounding_box,
    save_mask,
)


class TestGrayMask:
    def test_rejects_out_of_range(self):
        with pytest.raises(RangeError):
            GrayMask.from_array(np.array([[0.0, 1.5]]))

    def test_clip_option(self):
        m = GrayMask.from_array(np.array([[-0.2, 1.5]]), clip=True)
        assert m.values[0, 0] == 0.0 and m.values[0, 1] == 1.0

    def test_rejects_empty(self):
        with pytest.raises(DimensionMismatch):
            GrayMask.from_array(np.zeros((0, 3)))

    def test_values_read_only(self):
        m = GrayMask.full(4, 4, 0.5)
        with pytest.raises(ValueError):
            m.values[0, 0] = 1.0


class TestClassifyPixels:
    def test_all_one(self):
        m = GrayMask.full(3, 3, 1.0)
        assert np.all(classify_pixels(m, 0.05, 0.95) == PixelClass.ONE)

    def test_half_is_ambiguous(self):
        m = GrayMask.full(1, 1, 0.5)
        assert classify_pixels(m)[0, 0] == PixelClass.AMBIGUOUS

    def test_derived_values(self):
        m = GrayMask.from_array(np.array([[0.0, 0.05, 0.06, 0.95]], dtype=np.float32))
        got = classify_pixels(m, 0.05, 0.95)[0]
        assert list(got) == [
            PixelClass.ZERO,
            PixelClass.ZERO,
            PixelClass.AMBIGUOUS,
            PixelClass.ONE,
        ]

    def test_invalid_thresholds(self):
        m = GrayMask.full(2, 2, 0.5)
        with pytest.raises(InvalidThresholds):
            classify_pixels(m, 0.9, 0.1)
        with pytest.raises(InvalidThresholds):
            classify_pixels(m, 0.5, 0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=0, max_value=1, width=32), min_size=1, max_size=64))
    def test_partition_property(self, vals):
        arr = np.array(vals, dtype=np.float32).reshape(1, -1)
        m = GrayMask.from_array(arr)
        got = classify_pixels(m, 0.3, 0.7)
        # exactly one class per pixel, consistent with the thresholds
        assert np.all((got == 0) | (got == 1) | (got == 2))
        v = m.values
        assert np.array_equal(got == PixelClass.ZERO, v <= 0.3)
        assert np.array_equal(got == PixelClass.ONE, v >= 0.7)


class TestMinBoundingBox:
    def test_single_pixel(self):
        arr = np.zeros((8, 8), dtype=np.float32)
        arr[4, 3] = 1.0
        assert min_bounding_box(GrayMask.from_array(arr)) == Box(3, 4, 4, 5)

    def test_full_extent(self):
        m = GrayMask.full(5, 7, 1.0)
        assert min_bounding_box(m) == Box(0, 0, 5, 7)

    def test_two_pixels(self):
        arr = np.zeros((8, 8), dtype=np.float32)
        arr[1, 1] = 1.0
        arr[2, 5] = 1.0
        assert min_bounding_box(GrayMask.from_array(arr)) == Box(1, 1, 6, 3)

    def test_no_foreground(self):
        with pytest.raises(NoForeground):
            min_bounding_box(GrayMask.full(4, 4, 0.5))

    def test_brute_force_small_masks(self, rng):
        for _ in range(100):
            arr = (rng.random((rng.integers(1, 17), rng.integers(1, 17))) > 0.7).astype(
                np.float32
            )
            m = GrayMask.from_array(arr)
            if not (arr >= 0.95).any():
                with pytest.raises(NoForeground):
                    min_bounding_box(m)
                continue
            box = min_bounding_box(m)
            ys, xs = np.nonzero(arr >= 0.95)
            # contains every One pixel
            assert (xs >= box.x0).all() and (xs < box.x1).all()
            assert (ys >= box.y0).all() and (ys < box.y1).all()
            # and no smaller box does: each edge is touched
            assert (xs == box.x0).any() and (xs == box.x1 - 1).any()
            assert (ys == box.y0).any() and (ys == box.y1 - 1).any()


class TestMskfRoundtrip:
    def test_roundtrip_identity(self, rng, tmp_path):
        m = GrayMask.from_array(rng.random((13, 9)).astype(np.float32))
        path = tmp_path / "m.mskf"
        save_mask(m, path)
        back = load_mask(path)
        assert np.array_equal(back.values, m.values)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.mskf"
        p.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(FormatError):
            load_mask(p)

    def test_truncated_payload(self, tmp_path):
        import struct

        p = tmp_path / "short.mskf"
        p.write_bytes(b"MSKF" + struct.pack("<III", 2, 2, 1) + b"\x00" * 12)
        with pytest.raises(FormatError):
            load_mask(p)

    def test_out_of_range_value(self, tmp_path):
        import struct

        p = tmp_path / "range.mskf"
        payload = np.array([2.0], dtype="<f4").tobytes()
        p.write_bytes(b"MSKF" + struct.pack("<III", 1, 1, 1) + payload)
        with pytest.raises(RangeError):
            load_mask(p)

    def test_jitter_clamped(self, tmp_path):
        import struct

        p = tmp_path / "jitter.mskf"
        payload = np.array([1.0 + 5e-7], dtype="<f4").tobytes()
        p.write_bytes(b"MSKF" + struct.pack("<III", 1, 1, 1) + payload)
        m = load_mask(p)
        assert m.values[0, 0] == 1.0

    def test_multichannel_rejected(self, tmp_path):
        import struct

        p = tmp_path / "c3.mskf"
        payload = np.zeros(12, dtype="<f4").tobytes()
        p.write_bytes(b"MSKF" + struct.pack("<III", 2, 2, 3) + payload)
        with pytest.raises(FormatError):
            load_mask(p)


class TestSparseAnnotation:
    def test_from_mask_trichotomy(self):
        arr = np.array([[1.0, 0.0, 0.5]], dtype=np.float32)
        ann = SparseAnnotation.from_mask(GrayMask.from_array(arr))
        assert list(ann.labels[0]) == [1, 0, -1]
        assert ann.num_labeled == 2
