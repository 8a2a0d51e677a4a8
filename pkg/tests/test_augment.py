import numpy as np
import pytest

from conftest import gaussian_blob, random_mask
from seelab.augment import (
    ALL_SPECS,
    AugSpec,
    apply_spec,
    fuse,
    identity_spec,
    invert_spec,
    sample_augs,
    transform_box,
    transform_point,
)
from seelab.errors import ConfigError, DimensionMismatch, EmptyInput
from seelab.raster import Box, GrayMask

PERMUTATION_SPECS = [s for s in ALL_SPECS if s.scale == 1.0]


class TestSampleAugs:
    def test_identity_forced_in_slot0(self):
        for seed in range(5):
            augs = sample_augs(1, seed)
            assert augs == [identity_spec()]
            assert sample_augs(12, seed)[0] == identity_spec()

    def test_deterministic(self):
        assert sample_augs(12, 7) == sample_augs(12, 7)
        assert sample_augs(12, 7) != sample_augs(12, 8)

    def test_uniform_frequencies(self):
        augs = sample_augs(10_001, 1)[1:]
        counts = {}
        for a in augs:
            counts[a] = counts.get(a, 0) + 1
        assert len(counts) == 36
        for c in counts.values():
            assert abs(c / 10_000 - 1 / 36) < 0.01

    def test_k_must_be_positive(self):
        with pytest.raises(ConfigError):
            sample_augs(0, 1)

    def test_json_roundtrip(self):
        for s in ALL_SPECS:
            assert AugSpec.from_json(s.to_json()) == s


class TestApplyInvert:
    def test_identity(self, rng):
        m = random_mask(rng, 6, 9)
        out = apply_spec(m, identity_spec())
        assert np.array_equal(out.values, m.values)

    def test_rot90_shape_and_permutation(self):
        arr = np.arange(8, dtype=np.float32).reshape(2, 4) / 10.0
        m = GrayMask.from_array(arr)
        out = apply_spec(m, AugSpec(rot=90))
        assert out.shape == (4, 2)
        # brute-force index map for one counter-clockwise quarter turn
        expected = np.rot90(arr, 1)
        assert np.array_equal(out.values, expected.astype(np.float32))

    def test_scale_constant(self):
        m = GrayMask.full(5, 3, 0.42)
        out = apply_spec(m, AugSpec(scale=2.0))
        assert out.shape == (6, 10)
        np.testing.assert_allclose(out.values, 0.42, atol=1e-6)

    @pytest.mark.parametrize("spec", PERMUTATION_SPECS, ids=str)
    def test_permutation_roundtrip_exact(self, spec, rng):
        m = random_mask(rng, 7, 5)
        out = invert_spec(apply_spec(m, spec), spec, m.width, m.height)
        assert np.array_equal(out.values, m.values)

    @pytest.mark.parametrize("spec", PERMUTATION_SPECS, ids=str)
    def test_permutation_preserves_multiset(self, spec, rng):
        m = random_mask(rng, 6, 8)
        out = apply_spec(m, spec)
        assert np.array_equal(np.sort(out.values.ravel()), np.sort(m.values.ravel()))

    # Bilinear resampling bounds measured on the blob corpus; the roundtrip
    # error shrinks as blobs get smoother relative to the coarser grid.
    @pytest.mark.parametrize(
        "scale,sigma,bound",
        [
            (2.0, 2.0, 0.07),
            (2.0, 4.0, 0.02),
            (2.0, 6.0, 0.01),
            (0.5, 2.0, 0.25),
            (0.5, 4.0, 0.07),
            (0.5, 6.0, 0.03),
        ],
    )
    def test_scale_roundtrip_on_smooth_blobs(self, scale, sigma, bound):
        m = gaussian_blob(32, sigma=sigma)
        spec = AugSpec(scale=scale)
        back = invert_spec(apply_spec(m, spec), spec, 32, 32)
        err = np.abs(back.values.astype(np.float64) - m.values.astype(np.float64))
        assert err.max() <= bound

    def test_composite_flip_rot_exact(self, rng):
        m = random_mask(rng, 9, 4)
        spec = AugSpec(flip="h", rot=180, scale=1.0)
        back = invert_spec(apply_spec(m, spec), spec, m.width, m.height)
        assert np.array_equal(back.values, m.values)

    def test_dimension_mismatch(self, rng):
        m = random_mask(rng, 5, 5)
        with pytest.raises(DimensionMismatch):
            invert_spec(m, AugSpec(rot=90), 7, 3)


class TestPointBoxTransforms:
    @pytest.mark.parametrize("spec", PERMUTATION_SPECS, ids=str)
    def test_point_follows_pixel(self, spec, rng):
        m = random_mask(rng, 6, 11)
        view = apply_spec(m, spec)
        for _ in range(20):
            x = int(rng.integers(0, m.width))
            y = int(rng.integers(0, m.height))
            vx, vy = transform_point(x, y, spec, m.width, m.height)
            assert view.values[vy, vx] == m.values[y, x]

    @pytest.mark.parametrize("spec", PERMUTATION_SPECS, ids=str)
    def test_box_follows_region(self, spec):
        arr = np.zeros((10, 14), dtype=np.float32)
        arr[2:5, 3:9] = 1.0
        m = GrayMask.from_array(arr)
        box = Box(3, 2, 9, 5)
        view = apply_spec(m, spec)
        vb = transform_box(box, spec, m.width, m.height)
        ys, xs = np.nonzero(view.values >= 0.5)
        assert xs.min() == vb.x0 and xs.max() == vb.x1 - 1
        assert ys.min() == vb.y0 and ys.max() == vb.y1 - 1

    def test_scaled_box_stays_in_bounds(self):
        box = Box(1, 1, 31, 31)
        for spec in (AugSpec(scale=0.5), AugSpec(scale=2.0)):
            vb = transform_box(box, spec, 32, 32)
            oh, ow = spec.output_shape(32, 32)
            assert 0 <= vb.x0 < vb.x1 <= ow
            assert 0 <= vb.y0 < vb.y1 <= oh


class TestFuse:
    def test_mean_of_equal_masks(self, rng):
        m = random_mask(rng, 4, 4)
        out = fuse([m, m, m])
        assert np.array_equal(out.values, m.values)

    def test_symmetric_mean(self):
        out = fuse([GrayMask.full(3, 3, 0.0), GrayMask.full(3, 3, 1.0)])
        assert np.all(out.values == 0.5)

    def test_direct_mean(self):
        masks = [GrayMask.full(2, 2, v) for v in (0.2, 0.5, 0.8)]
        out = fuse(masks)
        np.testing.assert_allclose(out.values, 0.5, atol=1e-7)

    def test_permutation_invariant(self, rng):
        masks = [random_mask(rng, 5, 5) for _ in range(4)]
        a = fuse(masks)
        b = fuse(masks[::-1])
        assert np.array_equal(a.values, b.values)

    def test_bounded_by_inputs(self, rng):
        masks = [random_mask(rng, 6, 6) for _ in range(5)]
        out = fuse(masks).values
        stack = np.stack([m.values for m in masks])
        assert np.all(out >= stack.min(axis=0) - 1e-6)
        assert np.all(out <= stack.max(axis=0) + 1e-6)

    def test_errors(self, rng):
        with pytest.raises(EmptyInput):
            fuse([])
        with pytest.raises(DimensionMismatch):
            fuse([random_mask(rng, 3, 3), random_mask(rng, 4, 3)])
