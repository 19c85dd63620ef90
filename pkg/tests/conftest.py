import numpy as np
import pytest

from diffplan.geometry import Environment, SdfPrimitive, planar_arm_robot, point_mass_robot

BOUNDS = (np.full(2, -5.0), np.full(2, 5.0))


@pytest.fixture
def unit_sphere_env():
    return Environment([SdfPrimitive("sphere", np.zeros(2), radius=1.0)], BOUNDS)


@pytest.fixture
def mixed_env():
    return Environment(
        [
            SdfPrimitive("box", np.zeros(2), half_extents=np.array([1.0, 1.0])),
            SdfPrimitive("sphere", np.array([3.0, 0.0]), radius=0.5),
        ],
        BOUNDS,
    )


@pytest.fixture
def empty_env():
    return Environment([], BOUNDS)


@pytest.fixture
def point_robot():
    return point_mass_robot(bounds=(-5.0, 5.0), radius=0.0)


@pytest.fixture
def arm3():
    return planar_arm_robot(link_lengths=(1.0, 1.0, 1.0))
