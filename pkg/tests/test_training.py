import numpy as np
import pytest

from graspfield import datagen, training
from graspfield.datagen import REGIME_FIXED_TOP, SceneRecord, generate_scene_record
from graspfield.errors import ContractError
from graspfield.geometry import PrimitiveScene, make_sphere, render_depth_gt
from graspfield.network import LearnedOccupancyField, save_checkpoint
from graspfield.oracle import reconstruct_iou
from graspfield.seeding import OCC_SAMPLES, VIEW, derive_rng
from graspfield.training import (LOSS_LOG_HEADER, EpochLoss, TrainConfig,
                                 quality_accuracy, record_tsdf, total_loss,
                                 train, write_loss_log)

LN2 = float(np.log(2.0))


@pytest.fixture(scope="module")
def small_records():
    return [generate_scene_record(123, 7, max_per_class=4),
            generate_scene_record(123, 8, max_per_class=4)]


@pytest.fixture(scope="module")
def sphere_record():
    scene = PrimitiveScene([make_sphere(0.065, [0.15, 0.15, 0.13])],
                           workspace_size=0.30, support_plane_z=0.05)
    camera = datagen.sample_view(scene, derive_rng(0, VIEW), REGIME_FIXED_TOP)
    depth = render_depth_gt(scene, camera)
    pts, labels = datagen.occupancy_samples(scene, derive_rng(0, OCC_SAMPLES), n=80_000)
    return SceneRecord(scene, depth, pts, labels, [])


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ContractError):
        TrainConfig(batch_size=0)
    with pytest.raises(ContractError):
        TrainConfig(epochs=0)
    with pytest.raises(ContractError):
        TrainConfig(w_occ=-0.1)
    with pytest.raises(ContractError):
        TrainConfig(occ_samples_per_batch=0)


def test_total_loss_weighted_sum():
    cfg = TrainConfig()
    assert total_loss(0.5, 0.2, 0.1, cfg) == pytest.approx(1.3, abs=1e-12)
    assert total_loss(0.0, 0.0, 0.0, cfg) == 0.0
    no_local = TrainConfig(w_local=0.0)
    assert total_loss(0.5, 0.2, 9.9, no_local) == pytest.approx(1.2, abs=1e-12)
    with pytest.raises(ContractError):
        total_loss(-0.1, 0.0, 0.0, cfg)


def test_train_rejects_bad_inputs(small_records):
    with pytest.raises(ContractError):
        train([], TrainConfig())
    with pytest.raises(ContractError):
        train(small_records, TrainConfig(w_occ=0.0, w_quality=0.0, w_local=0.0))


def test_first_epoch_losses_start_at_ln2(small_records):
    _, log = train(small_records, TrainConfig(epochs=1))
    assert log[0].epoch == 1
    assert abs(log[0].occupancy - LN2) < 0.02
    assert abs(log[0].quality - LN2) < 0.02
    assert abs(log[0].local - LN2) < 0.02
    assert abs(log[0].total - 4 * LN2) < 0.08


def test_loss_decreases_over_epochs(small_records):
    _, log = train(small_records, TrainConfig(epochs=5, learning_rate=3e-4))
    assert len(log) == 5
    assert log[-1].total < log[0].total


def test_training_deterministic(small_records, tmp_path):
    cfg = TrainConfig(epochs=2, seed=11)
    net_a, log_a = train(small_records, cfg)
    net_b, log_b = train(small_records, cfg)
    assert log_a == log_b
    path_a, path_b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(path_a, net_a)
    save_checkpoint(path_b, net_b)
    assert path_a.read_bytes() == path_b.read_bytes()
    csv_a, csv_b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_loss_log(csv_a, log_a)
    write_loss_log(csv_b, log_b)
    assert csv_a.read_bytes() == csv_b.read_bytes()


def test_nondeterministic_mode_runs(small_records):
    _, log = train(small_records, TrainConfig(epochs=1, deterministic=False))
    assert len(log) == 1
    assert log[0].total > 0.0


def test_sphere_scene_overfit_reconstructs(sphere_record):
    cfg = TrainConfig(learning_rate=1e-2, epochs=500, w_quality=0.0, w_local=0.0,
                      occ_samples_per_batch=8192, seed=0)
    net, log = train([sphere_record], cfg)
    assert log[-1].occupancy < 0.05
    planes = net.encode_tsdf(record_tsdf(sphere_record, net.config.plane_resolution))
    field = LearnedOccupancyField(net, planes, sphere_record.scene.workspace_size)
    assert reconstruct_iou(field, sphere_record.scene) >= 0.8


def test_quality_only_ablation_converges():
    records = [generate_scene_record(123, i, max_per_class=6) for i in (7, 8, 9, 4)]
    cfg = TrainConfig(learning_rate=1e-3, epochs=30, w_occ=0.0, w_local=0.0, seed=3)
    net, log = train(records, cfg)
    assert log[-1].quality < log[0].quality
    # occupancy and local terms are skipped, logged as zero
    assert log[-1].occupancy == 0.0
    assert log[-1].local == 0.0
    assert quality_accuracy(net, records) >= 0.7


def test_write_loss_log_round_trip(tmp_path):
    rows = [EpochLoss(1, 0.693147, 0.7, 0.69, 2.776247),
            EpochLoss(2, 0.5, 0.45, 0.4, 2.35)]
    path = tmp_path / "loss.csv"
    write_loss_log(path, rows)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == LOSS_LOG_HEADER
    assert len(lines) == 3
    fields = lines[1].split(",")
    assert int(fields[0]) == 1
    assert float(fields[1]) == rows[0].occupancy
    assert float(fields[4]) == rows[0].total


def test_record_tsdf_shape(sphere_record):
    values = record_tsdf(sphere_record, 16)
    assert values.shape == (16, 16, 16)
    assert np.all(np.isfinite(values))
    assert values.min() < 0.0 < values.max()


def test_quality_accuracy_requires_grasps(sphere_record):
    net, _ = train([sphere_record], TrainConfig(epochs=1, w_quality=0.0, w_local=0.0))
    with pytest.raises(ContractError):
        quality_accuracy(net, [sphere_record])
