import numpy as np
import pytest

from qhfilters import shapes


@pytest.fixture(scope="session")
def tetra():
    return shapes.tetrahedron()


@pytest.fixture(scope="session")
def ico0():
    return shapes.icosahedron()


@pytest.fixture(scope="session")
def ico1():
    return shapes.icosphere(1)


@pytest.fixture(scope="session")
def ico2():
    return shapes.icosphere(2)


@pytest.fixture(scope="session")
def torus88():
    return shapes.torus(8, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
