import numpy as np
import pytest

from siltkit.quadrature import SimplexQuadrature


@pytest.fixture(scope="session")
def quad64():
    return SimplexQuadrature.gauss_legendre(64)


@pytest.fixture(scope="session")
def quad_geo():
    return SimplexQuadrature.geometric_diagonal()


@pytest.fixture(scope="session")
def quad_geo_fine():
    # diagonal-refined rule with enough position resolution for second moments
    return SimplexQuadrature.geometric_diagonal(30, 4, 24)


def axis_offset(r, d):
    u = np.zeros(d)
    u[0] = r
    return u
