import numpy as np
import pytest

from aqisense.imaging import HazeImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w):
    return HazeImage(rng.random((h, w, 3)))


def constant_image(value, h=6, w=6):
    return HazeImage(np.full((h, w, 3), float(value)))
