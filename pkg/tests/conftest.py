import sys
from pathlib import Path

import numpy as np
import pytest

TESTS_DIR = Path(__file__).parent
sys.path.insert(0, str(TESTS_DIR))

from hierxai.graph import WeightedPixelGraph, grid_edges  # noqa: E402
from hierxai.image import Image  # noqa: E402


@pytest.fixture
def rng():
    return np.random.RandomState(20240817)


def make_grid_graph(height, width, weights):
    us, vs = grid_edges(height, width)
    return WeightedPixelGraph(height, width, us, vs,
                              np.asarray(weights, dtype=np.float64))


def random_grid_graph(rng, height=None, width=None, integer=True, lo=1, hi=5):
    if height is None:
        height = rng.randint(2, 5)
    if width is None:
        width = rng.randint(2, 5)
    n_edges = height * (width - 1) + (height - 1) * width
    if integer:
        weights = rng.randint(lo, hi + 1, size=n_edges).astype(np.float64)
    else:
        weights = rng.rand(n_edges) * (hi - lo) + lo
    return make_grid_graph(height, width, weights)


def make_image(data):
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    return Image(arr)


@pytest.fixture
def ramp_image():
    data = np.arange(16, dtype=np.float32).reshape(1, 4, 4) / 15.0
    return Image(data)
