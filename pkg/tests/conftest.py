import numpy as np
import pytest

from cinemo.video_io import DatasetSpec, generate_clip


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_spec():
    return DatasetSpec(n_clips=4)


@pytest.fixture
def moving_clip(small_spec):
    return generate_clip(small_spec, 0, 2.0, seed=7)
