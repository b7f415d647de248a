import pytest

from cndkit.zoo import build_mobilenet_v2, build_optimized_xception, build_xception


@pytest.fixture(scope="session")
def xception():
    return build_xception()


@pytest.fixture(scope="session")
def optimized():
    return build_optimized_xception()


@pytest.fixture(scope="session")
def mobilenet():
    return build_mobilenet_v2()
