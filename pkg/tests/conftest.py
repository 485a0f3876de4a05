import numpy as np
import pytest

from idsprites.stream import FactorGrid, StreamConfig


@pytest.fixture
def tiny_stream():
    """Three tasks of three shapes on a 2-value grid, rendered at 32x32."""
    return StreamConfig(num_tasks=3, shapes_per_task=3, grid=FactorGrid(2, 2, 2, 2), resolution=32,
                        split_ratios=(0.5, 0.25, 0.25))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
