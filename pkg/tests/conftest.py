import math

import pytest

from tiltgrating import Beam, GratingGeometry, SurfacePotentialParams


@pytest.fixture(scope="session")
def standard():
    return GratingGeometry.standard()


@pytest.fixture(scope="session")
def he500_21():
    return Beam.helium(500.0, math.radians(21.0))


@pytest.fixture(scope="session")
def c3_sinx():
    return SurfacePotentialParams(0.1)
