"""Architecture and serialization checks for the tri-plane network."""

import numpy as np
import pytest

from graspfield import autodiff as ad
from graspfield.errors import ContractError, FormatError
from graspfield.geometry import Pose, random_rotation
from graspfield.network import (GraspNetwork, LearnedOccupancyField, NetworkConfig,
                                load_checkpoint, pose_vector, save_checkpoint)

WS = 0.30


@pytest.fixture(scope="module")
def net():
    return GraspNetwork(NetworkConfig(plane_resolution=16, plane_channels=4), seed=7)


def test_query_features_axis_mapping(net):
    # Plane k filled with its row index: the sampled value recovers the
    # projected first coordinate, proving the (xy, yz, xz) ordering.
    r = 16
    c = net.config.plane_channels
    row_val = np.tile(np.arange(r, dtype=np.float64)[:, None, None], (1, r, c))
    planes = [ad.constant(row_val) for _ in range(3)]
    pts = np.array([[0.12, 0.21, 0.06]])
    feats = net.query_features(planes, pts, WS).values[0]
    expected_rows = np.clip(pts[0] / WS * r - 0.5, 0, r - 1)  # x, y, z
    assert np.allclose(feats[0:c], expected_rows[0], atol=1e-12)       # xy plane -> x
    assert np.allclose(feats[c:2 * c], expected_rows[1], atol=1e-12)   # yz plane -> y
    assert np.allclose(feats[2 * c:], expected_rows[0], atol=1e-12)    # xz plane -> x


def test_tsdf_projection_ignores_projected_axis(net):
    # Moving a voxel impulse along x leaves the yz plane unchanged.
    r = 16
    grid = np.zeros((r, r, r))
    grid[3, 5, 9] = 1.0
    planes_a = net.encode_tsdf(grid)
    grid = np.zeros((r, r, r))
    grid[11, 5, 9] = 1.0
    planes_b = net.encode_tsdf(grid)
    assert np.allclose(planes_a[1].values, planes_b[1].values, atol=1e-15)
    assert not np.allclose(planes_a[0].values, planes_b[0].values, atol=1e-6)


def test_tsdf_encoding_translation_equivariance(net):
    # Shifting the grid one voxel in +x shifts the xy plane one row (away
    # from the padded border the convolution is translation equivariant).
    r = 16
    rng = np.random.default_rng(0)
    grid = np.zeros((r, r, r))
    grid[4:8, 6:10, 2:5] = rng.uniform(0.2, 1.0, size=(4, 4, 3))
    shifted = np.roll(grid, 1, axis=0)
    plane = net.encode_tsdf(grid)[0].values
    plane_shifted = net.encode_tsdf(shifted)[0].values
    assert np.allclose(plane[3:12], plane_shifted[4:13], atol=1e-12)


def test_pointcloud_encoding_permutation_invariant(net):
    rng = np.random.default_rng(1)
    pts = rng.uniform(0.05, 0.25, size=(200, 3))
    planes_a = net.encode_pointcloud(pts, WS)
    perm = rng.permutation(len(pts))
    planes_b = net.encode_pointcloud(pts[perm], WS)
    for a, b in zip(planes_a, planes_b):
        assert np.allclose(a.values, b.values, atol=1e-12)


def test_fresh_network_predicts_half_everywhere():
    net = GraspNetwork(NetworkConfig(plane_resolution=8, plane_channels=2), seed=0)
    rng = np.random.default_rng(2)
    feats = ad.constant(rng.normal(size=(40, net.config.feature_dim)))
    occ = net.occupancy_head(feats).values
    assert np.array_equal(occ, np.full((40, 1), 0.5))
    planes = [ad.constant(rng.normal(size=(8, 8, 2))) for _ in range(3)]
    pose = Pose(random_rotation(rng), np.array([0.1, 0.15, 0.1]))
    q = net.grasp_quality(planes, rng.uniform(0, WS, (60, 3)),
                          rng.normal(size=(60, 3)) * 0.02, pose, WS)
    assert q == 0.5
    with pytest.raises(ContractError):
        net.grasp_quality(planes, rng.uniform(0, WS, (49, 3)),
                          rng.normal(size=(49, 3)) * 0.02, pose, WS)
    # binary cross-entropy of a 0.5 prediction is ln 2
    y = rng.integers(0, 2, size=(40, 1)).astype(float)
    loss = ad.mean_all(ad.bce(net.occupancy_head(feats), y))
    assert np.allclose(loss.values, np.log(2.0), atol=1e-12)


def test_quality_invariant_to_local_point_order(net):
    rng = np.random.default_rng(5)
    for tensor in net.parameters():
        if not tensor.values.any():
            tensor.values = rng.normal(size=tensor.shape) * 0.05
    planes = [ad.constant(rng.normal(size=(16, 16, 4))) for _ in range(3)]
    world = rng.uniform(0, WS, (60, 3))
    local = rng.normal(size=(60, 3)) * 0.03
    pose = Pose(random_rotation(rng), np.array([0.12, 0.2, 0.1]))
    q1 = net.grasp_quality(planes, world, local, pose, WS)
    perm = rng.permutation(60)
    q2 = net.grasp_quality(planes, world[perm], local[perm], pose, WS)
    assert np.isclose(q1, q2, atol=1e-12)


def test_pose_vector_layout():
    rng = np.random.default_rng(6)
    pose = Pose(random_rotation(rng), np.array([0.03, 0.15, 0.3]))
    v = pose_vector(pose, WS)
    assert v.shape == (7,)
    assert np.allclose(v[:3], pose.translation / WS)
    assert v[3] >= 0.0
    assert np.isclose(np.linalg.norm(v[3:]), 1.0)


def test_learned_field_zero_outside_workspace():
    net = GraspNetwork(NetworkConfig(plane_resolution=8, plane_channels=2), seed=1)
    rng = np.random.default_rng(7)
    planes = [rng.normal(size=(8, 8, 2)) for _ in range(3)]
    field = LearnedOccupancyField(net, planes, WS)
    pts = np.array([
        [0.15, 0.15, 0.15],   # inside
        [0.0, 0.0, 0.0],      # corner counts as inside
        [-0.01, 0.15, 0.15],  # outside
        [0.15, 0.15, 0.31],   # outside
    ])
    occ = field.occupancy(pts)
    assert occ[0] == 0.5 and occ[1] == 0.5
    assert occ[2] == 0.0 and occ[3] == 0.0


def test_learned_field_matches_grad_path():
    net = GraspNetwork(seed=3)
    rng = np.random.default_rng(8)
    for tensor in net.parameters():
        if not tensor.values.any():
            tensor.values = rng.normal(size=tensor.shape) * 0.05
    planes = [ad.constant(rng.normal(size=(64, 64, 16))) for _ in range(3)]
    field = LearnedOccupancyField(net, planes, WS)
    pts = rng.uniform(0.0, WS, (500, 3))
    fast = field.occupancy(pts)
    feats = net.query_features(planes, pts, WS)
    ref = net.occupancy_head(feats).values[:, 0]
    # float32 inference replica of the float64 training head
    assert np.abs(fast - ref).max() < 1e-5


def test_checkpoint_round_trip(tmp_path):
    net = GraspNetwork(NetworkConfig(plane_resolution=8, plane_channels=2), seed=3)
    rng = np.random.default_rng(8)
    for tensor in net.parameters():
        tensor.values = rng.normal(size=tensor.shape)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, net, meta={"epochs": "5"})
    loaded, meta = load_checkpoint(path)
    assert meta["epochs"] == "5"
    assert loaded.config == net.config
    for name, tensor in net.params.items():
        stored = tensor.values.astype(np.float32).astype(np.float64)
        assert np.array_equal(loaded.params[name].values, stored), name
    # a second save of the loaded model is byte-identical
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(path2, loaded, meta={"epochs": "5"})
    save_checkpoint(path, loaded, meta={"epochs": "5"})
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_malformed(tmp_path):
    net = GraspNetwork(NetworkConfig(plane_resolution=8, plane_channels=2), seed=4)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, net)
    blob = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(blob[:-8])  # truncated payload
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    bad.write_bytes(blob + b"\x00\x00\x00\x00")  # trailing bytes
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    bad.write_bytes(b"something-else 1\npayload\n")
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    bad.write_bytes(blob.replace(b"tensor occ_out_w", b"tensor occ_oops_w"))
    with pytest.raises(FormatError):
        load_checkpoint(bad)
