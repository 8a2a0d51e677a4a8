import numpy as np
import pytest

from seelab.raster import GrayMask


def gaussian_blob(size: int = 32, cx: float = None, cy: float = None,
                  sigma: float = 4.0) -> GrayMask:
    """Smooth blob with a hard core, values spanning [0, 1]."""
    cx = size / 2 if cx is None else cx
    cy = size / 2 if cy is None else cy
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    g = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2)))
    return GrayMask.from_array(g / g.max())


def random_mask(rng: np.random.Generator, h: int, w: int) -> GrayMask:
    return GrayMask.from_array(rng.random((h, w)).astype(np.float32))


def binary_disk(size: int = 32, radius: float = 8.0) -> GrayMask:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2
    return GrayMask.from_array(
        (((xx - c) ** 2 + (yy - c) ** 2) <= radius**2).astype(np.float32)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
