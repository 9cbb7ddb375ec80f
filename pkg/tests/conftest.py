import numpy as np
import pytest

from vcplab import vcp
from vcplab.fields import ChartDomain, MetricField, TargetStructure


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260811)


@pytest.fixture(scope="session")
def g2():
    return vcp.builtin_vcp("G2", 7)


@pytest.fixture(scope="session")
def star3():
    return vcp.builtin_vcp("HodgeStar", 3)


@pytest.fixture(scope="session")
def spin7():
    return vcp.builtin_vcp("Spin7", 8)


@pytest.fixture(scope="session")
def unit_domain():
    return ChartDomain("FlatBox", ((0.0, 1.0),) * 3, 17)


@pytest.fixture(scope="session")
def euclid():
    return MetricField.euclidean()


@pytest.fixture(scope="session")
def g2_target():
    return TargetStructure.g2()
