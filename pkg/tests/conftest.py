import numpy as np
import pytest

from graspfield.geometry import (Pose, PrimitiveScene, make_box, make_cylinder,
                                 make_sphere)

NO_TABLE = -np.inf  # no support plane: pure-primitive geometry


@pytest.fixture
def sphere_scene():
    """Single sphere r=0.1 at the origin, no effective support plane."""
    return PrimitiveScene([make_sphere(0.1, [0.0, 0.0, 0.0])],
                          workspace_size=0.30, support_plane_z=NO_TABLE)


@pytest.fixture
def workspace_sphere_scene():
    """Sphere r=0.05 centered in the workspace cube, no support plane."""
    return PrimitiveScene([make_sphere(0.05, [0.15, 0.15, 0.15])],
                          workspace_size=0.30, support_plane_z=NO_TABLE)


@pytest.fixture
def mixed_scene():
    """Box + cylinder + sphere resting on a support plane at z = 0.05."""
    box = make_box([0.04, 0.06, 0.08],
                   Pose(np.eye(3), [0.10, 0.10, 0.09]))
    cyl = make_cylinder(0.025, 0.10, Pose(np.eye(3), [0.21, 0.20, 0.10]))
    sph = make_sphere(0.03, [0.10, 0.22, 0.08])
    return PrimitiveScene([box, cyl, sph], workspace_size=0.30, support_plane_z=0.05)


def random_pose(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    return Pose(r, rng.uniform(-0.5, 0.5, size=3))
