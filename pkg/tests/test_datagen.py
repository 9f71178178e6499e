from dataclasses import replace

import numpy as np
import pytest

from graspfield import datagen
from graspfield.datagen import (BOX_HEIGHT, BOX_SIDE, CLEARANCE, CYL_HEIGHT,
                                CYL_RADIUS, MANIFEST_NAME, MAX_GRASPS_PER_CLASS,
                                MAX_OBJECTS, N_OCC_SAMPLES, PILE,
                                POSITION_MARGIN, RECORD_MAGIC, REGIME_FIXED_TOP,
                                REGIME_HARD, REGIME_RANDOM, SPHERE_RADIUS,
                                VIEW_FOV_DEG, VIEW_IMAGE_SIZE,
                                _surface_clearance, build_dataset, gen_scene,
                                generate_scene_record, gt_scene_cloud,
                                load_manifest, load_scene_record,
                                noisy_local_set, occupancy_samples,
                                sample_view, save_scene_record, scene_seed)
from graspfield.errors import ContractError, FormatError
from graspfield.geometry import (BOX, CYLINDER, SPHERE, Pose, PrimitiveScene,
                                 SceneField, make_sphere, occupancy_gt,
                                 primitive_surface_points, sdf_gt)
from graspfield.gripper import GripperModel
from graspfield.io_formats import scene_to_text
from graspfield.oracle import label_grasp
from graspfield.render import LocalSurfaceSet, local_render_config, render_local
from graspfield.sampler import GraspCandidate
from graspfield.seeding import NOISE, VIEW, derive_rng
from tests.conftest import random_pose

WS = 0.30
SUPPORT = 0.05


@pytest.fixture(scope="module")
def record():
    return generate_scene_record(123, 7)


@pytest.fixture(scope="module")
def built_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    manifest = build_dataset(out, 2, root_seed=59, max_per_class=2)
    return out, manifest


def test_scene_seed_formula_and_spread():
    assert scene_seed(123, 7) == (123 * 1_000_000_007 + 7) % 2 ** 63
    seeds = {scene_seed(123, i) for i in range(100)}
    assert len(seeds) == 100


def test_gen_scene_deterministic():
    a = gen_scene(123, 4)
    b = gen_scene(123, 4)
    assert scene_to_text(a) == scene_to_text(b)
    pile = gen_scene(123, 4, kind=PILE)
    assert scene_to_text(a) != scene_to_text(pile)


def test_gen_scene_rejects_unknown_kind():
    with pytest.raises(ContractError):
        gen_scene(0, 0, kind="heap")


def test_packed_scene_properties():
    for index in (0, 4, 7):
        scene = gen_scene(123, index)
        prims = scene.primitives
        assert 1 <= len(prims) <= MAX_OBJECTS
        for i, prim in enumerate(prims):
            assert prim.shape in (BOX, CYLINDER)
            # upright: rotation is a pure yaw, so the z axis maps to itself
            assert abs(prim.pose.rotation[2, 2] - 1.0) < 1e-12
            x, y, z = prim.pose.translation
            assert POSITION_MARGIN <= x <= WS - POSITION_MARGIN
            assert POSITION_MARGIN <= y <= WS - POSITION_MARGIN
            if prim.shape == BOX:
                sx, sy, sz = prim.dimensions
                assert BOX_SIDE[0] <= sx <= BOX_SIDE[1]
                assert BOX_SIDE[0] <= sy <= BOX_SIDE[1]
                assert BOX_HEIGHT[0] <= sz <= BOX_HEIGHT[1]
                assert abs(z - (SUPPORT + sz / 2)) < 1e-12
            else:
                radius, height = prim.dimensions
                assert CYL_RADIUS[0] <= radius <= CYL_RADIUS[1]
                assert CYL_HEIGHT[0] <= height <= CYL_HEIGHT[1]
                assert abs(z - (SUPPORT + height / 2)) < 1e-12
            others = prims[:i] + prims[i + 1:]
            assert _surface_clearance(prim, others, SUPPORT) >= CLEARANCE - 1e-12


def test_pile_scene_settles_to_first_contact():
    scene = gen_scene(123, 7, kind=PILE)
    assert len(scene.primitives) >= 1
    for i, prim in enumerate(scene.primitives):
        # settled against the table and the objects placed before it
        gap = _surface_clearance(prim, scene.primitives[:i], SUPPORT)
        assert 0.0 <= gap <= 2e-7


def test_pile_scenes_use_free_rotations_and_spheres():
    tilted = 0
    spheres = 0
    for index in range(8):
        for prim in gen_scene(123, index, kind=PILE).primitives:
            if abs(prim.pose.rotation[2, 2] - 1.0) > 1e-3:
                tilted += 1
            if prim.shape == SPHERE:
                spheres += 1
                assert SPHERE_RADIUS[0] <= prim.dimensions[0] <= SPHERE_RADIUS[1]
    assert tilted > 0
    assert spheres > 0


def test_sample_view_fixed_top():
    scene = gen_scene(123, 7)
    cam = sample_view(scene, derive_rng(0, VIEW), REGIME_FIXED_TOP)
    assert cam.width == VIEW_IMAGE_SIZE and cam.height == VIEW_IMAGE_SIZE
    assert cam.fov_deg == VIEW_FOV_DEG
    center = np.full(3, WS / 2)
    offset = cam.pose.translation - center
    dist = np.linalg.norm(offset)
    assert abs(dist - 2.0 * WS) < 1e-12
    assert abs(offset[2] / dist - np.sin(np.deg2rad(60.0))) < 1e-12
    forward = cam.pose.rotation[:, 2]
    np.testing.assert_allclose(forward, -offset / dist, atol=1e-12)


@pytest.mark.parametrize("regime,elev_lo,elev_hi", [
    (REGIME_RANDOM, 15.0, 75.0),
    (REGIME_HARD, 15.0, 15.0),
])
def test_sample_view_regime_bounds(regime, elev_lo, elev_hi):
    scene = gen_scene(123, 7)
    rng = derive_rng(3, VIEW)
    center = np.full(3, WS / 2)
    azimuths = []
    for _ in range(25):
        cam = sample_view(scene, rng, regime)
        offset = cam.pose.translation - center
        dist = np.linalg.norm(offset)
        assert 1.6 * WS - 1e-12 <= dist <= 2.4 * WS + 1e-12
        elev = np.rad2deg(np.arcsin(offset[2] / dist))
        assert elev_lo - 1e-9 <= elev <= elev_hi + 1e-9
        azimuths.append(np.arctan2(offset[1], offset[0]))
    assert np.std(azimuths) > 0.1


def test_sample_view_rejects_unknown_regime():
    with pytest.raises(ContractError):
        sample_view(gen_scene(123, 7), derive_rng(0, VIEW), "sideways")


def test_gt_scene_cloud_lies_on_surfaces():
    scene = gen_scene(123, 7)
    cloud = gt_scene_cloud(scene)
    assert len(cloud.points) > 500
    lo, hi = scene.bounds()
    assert np.all(cloud.points >= lo - 1e-12)
    assert np.all(cloud.points <= hi + 1e-12)
    residual = np.abs(sdf_gt(scene, cloud.points))
    # leaf centroids can drift off curved surfaces, but only within a cell
    assert residual.max() < 2.5e-3
    assert residual.mean() < 1e-4
    again = gt_scene_cloud(scene)
    np.testing.assert_array_equal(cloud.points, again.points)


def test_occupancy_samples_labels_and_coverage():
    scene = gen_scene(123, 7)
    pts, labels = occupancy_samples(scene, derive_rng(11, NOISE))
    assert pts.shape == (N_OCC_SAMPLES, 3)
    assert labels.shape == (N_OCC_SAMPLES,)
    assert labels.dtype == np.uint8
    assert np.all(pts >= 0.0) and np.all(pts <= WS)
    np.testing.assert_array_equal(labels, (occupancy_gt(scene, pts) >= 0.5).astype(np.uint8))
    assert 0 < labels.sum() < N_OCC_SAMPLES


def test_occupancy_samples_volume_fraction():
    radius = 0.05
    scene = PrimitiveScene([make_sphere(radius, [0.15, 0.15, 0.15])],
                           workspace_size=WS, support_plane_z=-np.inf)
    _, labels = occupancy_samples(scene, derive_rng(2, NOISE))
    fraction = 4.0 / 3.0 * np.pi * radius ** 3 / WS ** 3
    sd = np.sqrt(N_OCC_SAMPLES * fraction * (1.0 - fraction))
    assert abs(labels.sum() - N_OCC_SAMPLES * fraction) <= 3.0 * sd


def test_occupancy_samples_empty_scene():
    scene = PrimitiveScene([], workspace_size=WS, support_plane_z=SUPPORT)
    pts, labels = occupancy_samples(scene, derive_rng(1, NOISE), n=400)
    assert pts.shape == (400, 3)
    np.testing.assert_array_equal(labels, (occupancy_gt(scene, pts) >= 0.5).astype(np.uint8))
    assert np.all(labels[pts[:, 2] > SUPPORT] == 0)


def test_noisy_local_set_perturbs_and_relabels():
    sphere = make_sphere(0.04, [0.15, 0.15, 0.12])
    scene = PrimitiveScene([sphere], workspace_size=WS, support_plane_z=SUPPORT)
    surf = primitive_surface_points(sphere, 200)
    pose = random_pose(np.random.default_rng(5))
    local = LocalSurfaceSet(surf, pose.inverse().transform(surf))
    world, grasp, labels = noisy_local_set(local, pose, scene, derive_rng(9, NOISE, 0))
    disp = np.abs(world - surf)
    assert disp.max() > 0.0
    assert disp.max() < 0.05
    assert 0.0005 < disp.mean() < 0.01
    np.testing.assert_allclose(grasp, pose.inverse().transform(world), atol=1e-12)
    np.testing.assert_array_equal(labels, (occupancy_gt(scene, world) >= 0.5).astype(np.uint8))
    # noise straddles the surface, so both occupancy classes appear
    assert 0 < labels.sum() < len(labels)
    world2, _, _ = noisy_local_set(local, pose, scene, derive_rng(9, NOISE, 0))
    np.testing.assert_array_equal(world, world2)


def test_noisy_local_set_zero_scale_keeps_occupied_labels():
    sphere = make_sphere(0.04, [0.15, 0.15, 0.12])
    scene = PrimitiveScene([sphere], workspace_size=WS, support_plane_z=-np.inf)
    field = SceneField(scene)
    approach = np.array([0.0, 0.0, -1.0])
    closing = np.array([1.0, 0.0, 0.0])
    rot = np.column_stack([approach, closing, np.cross(approach, closing)])
    pose = Pose(rot, sphere.pose.translation)
    gripper = GripperModel()
    cfg = replace(local_render_config(gripper), occupied_side=True)
    local = render_local(field, pose, gripper.max_width, gripper, cfg=cfg)
    assert local is not None
    world, _, labels = noisy_local_set(local, pose, scene, derive_rng(4, NOISE, 0),
                                       sigma_scale=0.0)
    np.testing.assert_array_equal(world, local.points_world)
    assert np.all(labels == 1)


def test_generate_scene_record_balanced(record):
    assert record.depth.depth.shape == (VIEW_IMAGE_SIZE, VIEW_IMAGE_SIZE)
    assert record.occ_points.shape == (N_OCC_SAMPLES, 3)
    n_pos = record.n_positive
    assert n_pos >= 1
    assert n_pos <= MAX_GRASPS_PER_CLASS
    assert len(record.grasps) == 2 * n_pos
    for grasp in record.grasps:
        assert 0.0 < grasp.width <= 0.08
        assert 50 <= len(grasp.local_world) <= 1024
        assert grasp.local_occ.shape == (len(grasp.local_world),)
        np.testing.assert_allclose(
            grasp.local_grasp, grasp.pose.inverse().transform(grasp.local_world),
            atol=1e-12)
        relabel = label_grasp(GraspCandidate(grasp.pose, grasp.width), record.scene)
        assert int(relabel.success) == grasp.label


def test_record_round_trip(record, tmp_path):
    path = tmp_path / "scene.bin"
    save_scene_record(path, record)
    loaded = load_scene_record(path)
    assert scene_to_text(loaded.scene) == scene_to_text(record.scene)
    np.testing.assert_array_equal(loaded.camera.pose.rotation, record.camera.pose.rotation)
    np.testing.assert_array_equal(loaded.camera.pose.translation,
                                  record.camera.pose.translation)
    assert loaded.camera.fov_deg == record.camera.fov_deg
    assert loaded.camera.width == record.camera.width
    np.testing.assert_array_equal(loaded.depth.depth,
                                  record.depth.depth.astype("<f4").astype(np.float64))
    np.testing.assert_array_equal(loaded.occ_points,
                                  record.occ_points.astype("<f4").astype(np.float64))
    np.testing.assert_array_equal(loaded.occ_labels, record.occ_labels)
    assert len(loaded.grasps) == len(record.grasps)
    for got, want in zip(loaded.grasps, record.grasps):
        np.testing.assert_array_equal(got.pose.rotation, want.pose.rotation)
        np.testing.assert_array_equal(got.pose.translation, want.pose.translation)
        assert got.width == want.width
        assert got.label == want.label
        np.testing.assert_array_equal(got.local_world,
                                      want.local_world.astype("<f4").astype(np.float64))
        np.testing.assert_array_equal(got.local_grasp,
                                      want.local_grasp.astype("<f4").astype(np.float64))
        np.testing.assert_array_equal(got.local_occ, want.local_occ)
    resaved = tmp_path / "again.bin"
    save_scene_record(resaved, loaded)
    assert resaved.read_bytes() == path.read_bytes()


def test_record_format_errors(record, tmp_path):
    path = tmp_path / "scene.bin"
    save_scene_record(path, record)
    blob = path.read_bytes()

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a record" + blob[12:])
    with pytest.raises(FormatError):
        load_scene_record(bad)

    short = tmp_path / "short.bin"
    short.write_bytes(blob[:-10])
    with pytest.raises(FormatError):
        load_scene_record(short)

    longer = tmp_path / "long.bin"
    longer.write_bytes(blob + b"x")
    with pytest.raises(FormatError):
        load_scene_record(longer)


def test_build_dataset_deterministic_across_runs_and_workers(built_dataset, tmp_path):
    base_dir, manifest = built_dataset
    rerun = tmp_path / "rerun"
    build_dataset(rerun, 2, root_seed=59, max_per_class=2)
    parallel = tmp_path / "parallel"
    build_dataset(parallel, 2, root_seed=59, max_per_class=2, workers=2)
    names = [MANIFEST_NAME] + manifest.files
    assert sorted(p.name for p in base_dir.iterdir()) == sorted(names)
    for name in names:
        base = (base_dir / name).read_bytes()
        assert (rerun / name).read_bytes() == base
        assert (parallel / name).read_bytes() == base


def test_built_records_load(built_dataset):
    base_dir, manifest = built_dataset
    for path in manifest.paths(base_dir):
        rec = load_scene_record(path)
        assert rec.depth.depth.shape == (VIEW_IMAGE_SIZE, VIEW_IMAGE_SIZE)
        assert len(rec.grasps) == 2 * rec.n_positive


def test_load_manifest_round_trip(built_dataset):
    base_dir, manifest = built_dataset
    loaded = load_manifest(base_dir)
    assert loaded == manifest
    assert loaded.root_seed == 59
    assert loaded.kind == datagen.PACKED
    assert loaded.regime == REGIME_RANDOM
    assert loaded.workspace_size == WS
    assert loaded.files == ["scene_00000.bin", "scene_00001.bin"]


def test_load_manifest_errors(built_dataset, tmp_path):
    with pytest.raises(FormatError):
        load_manifest(tmp_path / "nowhere")

    base_dir, _ = built_dataset
    text = (base_dir / MANIFEST_NAME).read_text(encoding="ascii")

    bad_header = tmp_path / "header"
    bad_header.mkdir()
    (bad_header / MANIFEST_NAME).write_text("graspfield-dataset 999\n" +
                                            text.split("\n", 1)[1], encoding="ascii")
    with pytest.raises(FormatError):
        load_manifest(bad_header)

    missing_scene = tmp_path / "missing"
    missing_scene.mkdir()
    lines = text.strip().splitlines()
    (missing_scene / MANIFEST_NAME).write_text("\n".join(lines[:-1]) + "\n",
                                               encoding="ascii")
    with pytest.raises(FormatError):
        load_manifest(missing_scene)

    bad_line = tmp_path / "line"
    bad_line.mkdir()
    (bad_line / MANIFEST_NAME).write_text("\n".join(lines[:-1] + ["scene oops"]) + "\n",
                                          encoding="ascii")
    with pytest.raises(FormatError):
        load_manifest(bad_line)


def test_build_dataset_validates_arguments(tmp_path):
    with pytest.raises(ContractError):
        build_dataset(tmp_path, 0)
    with pytest.raises(ContractError):
        build_dataset(tmp_path, 1, workers=0)
    with pytest.raises(ContractError):
        build_dataset(tmp_path, 1, kind="heap")
    with pytest.raises(ContractError):
        build_dataset(tmp_path, 1, regime="sideways")
