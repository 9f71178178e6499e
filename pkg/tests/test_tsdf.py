import numpy as np
import pytest

from graspfield.geometry import (DepthImage, PinholeCamera, Pose,
                                 PrimitiveScene, look_at, make_box,
                                 render_depth_gt)
from graspfield.tsdf import TSDFGrid, integrate

from conftest import NO_TABLE


def _wall_scene():
    # plane-like box at x = 0.20 facing the camera, inside a 0.3 workspace
    wall = make_box([0.02, 0.4, 0.4], Pose(np.eye(3), [0.21, 0.15, 0.15]))
    return PrimitiveScene([wall], workspace_size=0.30, support_plane_z=NO_TABLE)


def _wall_camera():
    return PinholeCamera(look_at([-0.25, 0.15, 0.15], [0.3, 0.15, 0.15]), 70.0, 64, 64)


def test_flat_wall_signs():
    scene = _wall_scene()
    grid = TSDFGrid(resolution=64, size=0.30)
    integrate(grid, render_depth_gt(scene, _wall_camera()))
    vs = grid.voxel_size
    # row of voxels along x at the grid center height
    j = k = 32
    values = grid.values[:, j, k]
    weights = grid.weights[:, j, k]
    xs = (np.arange(64) + 0.5) * vs
    front = (xs < 0.20 - grid.truncation) & (weights > 0)
    assert front.any()
    assert np.allclose(values[front], 1.0)
    behind = (xs > 0.20 + 0.5 * vs) & (xs < 0.20 + grid.truncation) & (weights > 0)
    assert behind.any()
    assert np.all(values[behind] < 0.0)


def test_zero_crossing_near_surface():
    scene = _wall_scene()
    grid = TSDFGrid(resolution=64, size=0.30)
    integrate(grid, render_depth_gt(scene, _wall_camera()))
    vs = grid.voxel_size
    xs = (np.arange(64) + 0.5) * vs
    values = grid.values[:, 32, 32]
    sign_change = np.nonzero((values[:-1] > 0) & (values[1:] <= 0))[0]
    assert len(sign_change) >= 1
    i = sign_change[0]
    # linear interpolation of the crossing vs the true wall face at x = 0.20
    t = values[i] / (values[i] - values[i + 1])
    x_cross = xs[i] + t * vs
    assert abs(x_cross - 0.20) < vs


def test_integrate_idempotent_values():
    scene = _wall_scene()
    img = render_depth_gt(scene, _wall_camera())
    grid = TSDFGrid(resolution=32, size=0.30)
    integrate(grid, img)
    once = grid.values.copy()
    integrate(grid, img)
    assert np.array_equal(grid.values, once)


def test_empty_image_no_update():
    cam = _wall_camera()
    grid = TSDFGrid(resolution=32, size=0.30)
    integrate(grid, DepthImage(np.zeros((64, 64)), cam))
    assert np.all(grid.values == 0.0) and np.all(grid.weights == 0.0)


def test_value_range_and_weight_cap():
    scene = _wall_scene()
    img = render_depth_gt(scene, _wall_camera())
    grid = TSDFGrid(resolution=32, size=0.30)
    for _ in range(105):
        integrate(grid, img)
    assert grid.values.min() >= -1.0 and grid.values.max() <= 1.0
    assert grid.weights.max() <= 100.0
    assert grid.truncation == pytest.approx(4 * grid.voxel_size)
