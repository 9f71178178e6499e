"""Joint training of the occupancy and grasp-quality heads.

Each mini-batch comes from a single scene: the scene's depth view is fused
into a TSDF grid and encoded once, then three loss terms share the encoding.
Occupancy is supervised on a random subset of the scene's labeled sample
points, grasp quality on up to batch_size labeled grasps, and local
occupancy on the grasps' noise-perturbed surface patches. In deterministic
mode every shuffle and subsample draw derives from the config seed and all
reductions run serially, so repeated runs produce byte-identical
checkpoints and loss logs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .datagen import SceneRecord
from .errors import require
from .network import GraspNetwork, LearnedOccupancyField, pose_vector
from .seeding import SHUFFLE, derive_rng
from .tsdf import TSDFGrid, integrate

logger = logging.getLogger(__name__)

LOSS_LOG_HEADER = "epoch,loss_occupancy,loss_quality,loss_local,loss_total"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    w_occ: float = 2.0
    w_quality: float = 1.0
    w_local: float = 1.0
    epochs: int = 10
    seed: int = 0
    deterministic: bool = True
    occ_samples_per_batch: int = 1024

    def __post_init__(self):
        require(self.learning_rate > 0.0, "learning_rate must be positive")
        require(self.batch_size >= 1, "batch_size must be >= 1")
        require(self.epochs >= 1, "epochs must be >= 1")
        require(self.occ_samples_per_batch >= 1, "occ_samples_per_batch must be >= 1")
        for name in ("w_occ", "w_quality", "w_local"):
            require(getattr(self, name) >= 0.0, f"{name} must be nonnegative")


def total_loss(loss_occ: float, loss_quality: float, loss_local: float,
               cfg: TrainConfig) -> float:
    """Weighted sum of the three loss components."""
    require(min(loss_occ, loss_quality, loss_local) >= 0.0,
            "loss components must be nonnegative")
    return (cfg.w_occ * loss_occ + cfg.w_quality * loss_quality +
            cfg.w_local * loss_local)


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    occupancy: float
    quality: float
    local: float
    total: float


def write_loss_log(path, rows: list[EpochLoss]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_LOG_HEADER.split(","))
        for row in rows:
            writer.writerow([row.epoch, repr(row.occupancy), repr(row.quality),
                             repr(row.local), repr(row.total)])


def record_tsdf(record: SceneRecord, resolution: int) -> np.ndarray:
    """Fuse the record's single depth view into a cubic TSDF grid."""
    grid = TSDFGrid(resolution=resolution, size=record.scene.workspace_size)
    integrate(grid, record.depth)
    return grid.values


class _Accumulator:
    """Mean over the batches where a term was actually computed."""

    def __init__(self):
        self.total = 0.0
        self.count = 0

    def add(self, value: float) -> None:
        self.total += value
        self.count += 1

    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0


def _grasp_batch_terms(network: GraspNetwork, planes, record: SceneRecord,
                       chunk: list[int], cfg: TrainConfig, ws: float):
    """Quality and local-occupancy losses for one scene's grasp chunk.

    All chunk grasps share one feature query and one point-MLP pass; the
    per-grasp pooled embeddings are then classified together.
    """
    grasps = [record.grasps[j] for j in chunk]
    world = np.concatenate([g.local_world for g in grasps], axis=0)
    gframe = np.concatenate([g.local_grasp for g in grasps], axis=0)
    feats = network.query_features(planes, world, ws)
    loss_quality = None
    loss_local = None
    if cfg.w_local > 0.0:
        occ_labels = np.concatenate([g.local_occ for g in grasps]).astype(np.float64)
        pred = network.occupancy_head(feats)
        loss_local = ad.mean_all(ad.bce(pred, occ_labels[:, None]))
    if cfg.w_quality > 0.0:
        embed = network.local_point_embedding(gframe, feats, ws)
        rows = []
        offset = 0
        for g in grasps:
            seg = ad.gather_rows(embed, np.arange(offset, offset + len(g.local_world)))
            offset += len(g.local_world)
            pooled = ad.max_pool_over_points(seg)
            pose = ad.constant(pose_vector(g.pose, ws)[None, :])
            rows.append(ad.concat([pooled, pose], axis=1))
        preds = network.quality_classifier(ad.concat(rows, axis=0))
        labels = np.array([float(g.label) for g in grasps])
        loss_quality = ad.mean_all(ad.bce(preds, labels[:, None]))
    return loss_quality, loss_local


def train(records: list[SceneRecord], cfg: TrainConfig = TrainConfig(),
          network: GraspNetwork | None = None) -> tuple[GraspNetwork, list[EpochLoss]]:
    """Mini-batch adaptive-moment training; returns the network and loss log."""
    require(len(records) > 0, "training needs at least one scene record")
    require(cfg.w_occ > 0.0 or cfg.w_quality > 0.0 or cfg.w_local > 0.0,
            "at least one loss weight must be positive")
    ws = records[0].scene.workspace_size
    require(all(r.scene.workspace_size == ws for r in records),
            "records must share one workspace size")
    if network is None:
        network = GraspNetwork(seed=cfg.seed)
    grids = [None] * len(records)
    optimizer = ad.Adam(network.parameters(), lr=cfg.learning_rate)
    log: list[EpochLoss] = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.deterministic:
            rng = derive_rng(cfg.seed, SHUFFLE, epoch)
        else:
            rng = np.random.default_rng()
        occ_acc, qual_acc, local_acc, total_acc = (_Accumulator() for _ in range(4))
        for s in rng.permutation(len(records)):
            record = records[s]
            if grids[s] is None:
                grids[s] = record_tsdf(record,
                                       network.config.plane_resolution).astype(np.float32)
            chunk_order = rng.permutation(len(record.grasps))
            chunks = [chunk_order[i:i + cfg.batch_size]
                      for i in range(0, len(chunk_order), cfg.batch_size)] or [[]]
            for chunk in chunks:
                optimizer.zero_grad()
                planes = network.encode_tsdf(grids[s].astype(np.float64))
                terms = []
                values = {"occ": 0.0, "qual": 0.0, "local": 0.0}
                if cfg.w_occ > 0.0:
                    n = min(cfg.occ_samples_per_batch, len(record.occ_points))
                    sel = np.sort(rng.choice(len(record.occ_points), size=n,
                                             replace=False))
                    feats = network.query_features(planes, record.occ_points[sel], ws)
                    pred = network.occupancy_head(feats)
                    labels = record.occ_labels[sel].astype(np.float64)[:, None]
                    loss_occ = ad.mean_all(ad.bce(pred, labels))
                    occ_acc.add(float(loss_occ.values))
                    values["occ"] = float(loss_occ.values)
                    terms.append(ad.scale(loss_occ, cfg.w_occ))
                if len(chunk) > 0 and (cfg.w_quality > 0.0 or cfg.w_local > 0.0):
                    loss_quality, loss_local = _grasp_batch_terms(
                        network, planes, record, list(chunk), cfg, ws)
                    if loss_quality is not None:
                        qual_acc.add(float(loss_quality.values))
                        values["qual"] = float(loss_quality.values)
                        terms.append(ad.scale(loss_quality, cfg.w_quality))
                    if loss_local is not None:
                        local_acc.add(float(loss_local.values))
                        values["local"] = float(loss_local.values)
                        terms.append(ad.scale(loss_local, cfg.w_local))
                if not terms:
                    continue
                loss = terms[0]
                for term in terms[1:]:
                    loss = ad.add(loss, term)
                ad.backward(loss)
                optimizer.step()
                total_acc.add(total_loss(values["occ"], values["qual"],
                                         values["local"], cfg))
        log.append(EpochLoss(epoch, occ_acc.mean(), qual_acc.mean(),
                             local_acc.mean(), total_acc.mean()))
        logger.info("epoch %d: occ %.4f qual %.4f local %.4f total %.4f",
                    epoch, log[-1].occupancy, log[-1].quality, log[-1].local,
                    log[-1].total)
    return network, log


def quality_accuracy(network: GraspNetwork, records: list[SceneRecord],
                     threshold: float = 0.5) -> float:
    """Grasp classification accuracy on labeled records at the threshold."""
    require(len(records) > 0, "accuracy needs at least one record")
    ws = records[0].scene.workspace_size
    correct = 0
    total = 0
    for record in records:
        if not record.grasps:
            continue
        grid = record_tsdf(record, network.config.plane_resolution)
        planes = network.encode_tsdf(grid)
        for g in record.grasps:
            pred = network.grasp_quality(planes, g.local_world, g.local_grasp,
                                         g.pose, ws)
            correct += int((pred >= threshold) == bool(g.label))
            total += 1
    require(total > 0, "accuracy needs at least one labeled grasp")
    return correct / total


def record_field(network: GraspNetwork, record: SceneRecord) -> LearnedOccupancyField:
    """Learned occupancy field from the record's stored depth view."""
    grid = record_tsdf(record, network.config.plane_resolution)
    planes = network.encode_tsdf(grid)
    return LearnedOccupancyField(network, planes, record.scene.workspace_size)
