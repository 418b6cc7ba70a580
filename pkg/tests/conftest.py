import numpy as np
import pytest

from optbias.problems import PartitionSpec, ShiftedQuadratic


@pytest.fixture
def quad1236():
    """1-d quadratic family with shifts 1, 2, 3, 6 (mean 3, variance 3.5)."""
    return ShiftedQuadratic.from_values([1.0, 2.0, 3.0, 6.0])


@pytest.fixture
def identity_partition_22():
    return PartitionSpec.identity(2, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
