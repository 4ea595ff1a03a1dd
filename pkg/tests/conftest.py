import hypothesis
import numpy as np
import pytest

from src.fem.mesh import build_unit_disc_mesh, build_unit_square_mesh

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=25, deadline=None)
hypothesis.settings.load_profile("fast")


@pytest.fixture(scope="session")
def disc1():
    return build_unit_disc_mesh(1)


@pytest.fixture(scope="session")
def disc2():
    return build_unit_disc_mesh(2)


@pytest.fixture(scope="session")
def disc3():
    return build_unit_disc_mesh(3)


@pytest.fixture(scope="session")
def square():
    return build_unit_square_mesh(6)


@pytest.fixture(scope="session")
def square8():
    return build_unit_square_mesh(8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
